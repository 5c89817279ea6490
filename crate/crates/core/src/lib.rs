//! Preference-data curation engine.
//!
//! The crate is organised around the life of a preference pair:
//!
//! - [`pair`] and [`ledger`] hold the domain types and the append-only pool
//!   ledger that every stage writes through.
//! - [`ingest`] turns raw records into pairs (structural check, global
//!   deduplication, 13-gram decontamination).
//! - [`embed`] maps contexts and responses to unit vectors and answers exact
//!   top-k cosine queries.
//! - [`btrm`] is the pointwise Bradley-Terry reward head and its trainer.
//! - [`retrieval`] converts reward-model confidence into retrieval budgets.
//! - [`judge`] assembles judge prompts and aggregates votes.
//! - [`curate`] orchestrates the iterative human/judge loop and the
//!   large-scale consistency filtering.
//! - [`eval`] is the measurement harness plus the synthetic world used to
//!   exercise the pipeline end to end.

pub mod btrm;
pub mod curate;
pub mod embed;
pub mod eval;
pub mod hash;
pub mod ingest;
pub mod jsonl;
pub mod ledger;
pub mod manifest;
pub mod pair;
pub mod retrieval;
pub mod rundir;
pub mod store;
pub mod judge;

pub use btrm::{Arch, PairPrediction, RewardModel, Schedule, TrainConfig};
pub use embed::{Embedding, SimilarityIndex};
pub use ledger::{Ledger, Pool, Reason};
pub use pair::{AttributeSet, Controversiality, Objectivity, PairId, PreferencePair, Role, Turn};
