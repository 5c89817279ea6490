//! Per-command run manifests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hash;
use crate::ledger::Pool;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Decontaminate,
    Embed,
    Stage1,
    Stage2,
    Recycle,
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub stage: Stage,
    pub iteration: u32,
    pub rng_seed: u64,
    pub config_digest: String,
    pub counts_before: BTreeMap<Pool, usize>,
    pub counts_after: BTreeMap<Pool, usize>,
    /// Free-form counters (deferred pairs, skipped eval pairs, flags).
    #[serde(default)]
    pub notes: BTreeMap<String, u64>,
}

impl RunManifest {
    /// Net change in each pool between before and after.
    pub fn deltas(&self) -> BTreeMap<Pool, i64> {
        Pool::ALL
            .iter()
            .map(|p| {
                let b = self.counts_before.get(p).copied().unwrap_or(0) as i64;
                let a = self.counts_after.get(p).copied().unwrap_or(0) as i64;
                (*p, a - b)
            })
            .collect()
    }
}

/// SHA-256 over the canonical JSON form of a configuration.
///
/// Struct fields serialize in declaration order and maps must be `BTreeMap`,
/// so equal configurations always give equal digests.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hash::sha256_hex(&bytes)
}
