//! Two-stage curation.
//!
//! Stage 1 iterates train → retrieve → label: a reward model is fit on
//! silver and checkpoint-selected on gold, its mistakes on gold drive
//! retrieval of similar unverified pairs, and those are split between
//! human verification (into gold) and judge labeling (into silver).
//!
//! Stage 2 sweeps the remaining unverified pool: pairs the best model
//! already ranks correctly pass the confidence filter, the rest are
//! judge-labeled, and everything kept must agree with a model trained only
//! on human-verified data. Discards can be flipped into a separate
//! recycled shard.

mod stage1;
mod stage2;

pub use stage1::{initialize_seed, stage1_iteration, IterationOutcome, IterationReport, SeedReport, Stage1State};
pub use stage2::{
    consistent, recycle_discarded, recycle_flipped, run_stage2, stage2_confidence_filter,
    stage2_consistency_retain, train_gold_model, GoldModel, RecycleReport, Stage2Outcome,
    Stage2Report,
};

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::btrm::{BtrmError, EmbeddedPair, TrainConfig};
use crate::embed::{IndexError, PairEmbeddings, SimilarityIndex};
use crate::hash::{derive_seed, stable_hash64};
use crate::judge::{LabelConfig, PreferenceOracle};
use crate::ledger::{Applied, Ledger, LedgerError, Outcome, Pool, Reason, Verdict};
use crate::pair::{AttributeSet, PairId, PreferencePair};
use crate::retrieval::{RetrievalError, DEFAULT_K_MAX};
use crate::store::PairStore;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CurateError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Model(#[from] BtrmError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("{0} pool is empty")]
    EmptyPool(Pool),
    #[error("pair {0} has no embeddings")]
    MissingEmbedding(PairId),
    #[error("gold member {0} has no human verdict")]
    GoldWithoutHumanVerdict(PairId),
    #[error("gold model needs at least {need} human-verified pairs, have {have}")]
    InsufficientGold { have: usize, need: usize },
    #[error("invalid curation config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurateConfig {
    pub rng_seed: u64,
    /// Share of each Stage-1 annotation queue routed to humans.
    pub human_ratio: f64,
    /// Share of the seed pool verified by humans during initialization.
    pub seed_human_fraction: f64,
    pub k_max: usize,
    pub train: TrainConfig,
    pub label: LabelConfig,
    /// Minimum human-verified pairs for the gold model.
    pub min_gold: usize,
    /// Share of gold held out for the gold model's checkpoint selection.
    pub gold_holdout_fraction: f64,
    /// Train on the recycled shard as well.
    pub include_recycled: bool,
}

impl Default for CurateConfig {
    fn default() -> Self {
        CurateConfig {
            rng_seed: 0,
            human_ratio: 0.1,
            seed_human_fraction: 0.1,
            k_max: DEFAULT_K_MAX,
            train: TrainConfig::default(),
            label: LabelConfig::default(),
            min_gold: 20,
            gold_holdout_fraction: 0.2,
            include_recycled: false,
        }
    }
}

impl CurateConfig {
    pub fn validate(&self) -> Result<(), CurateError> {
        for (name, v) in [
            ("human_ratio", self.human_ratio),
            ("seed_human_fraction", self.seed_human_fraction),
            ("gold_holdout_fraction", self.gold_holdout_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CurateError::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.k_max == 0 {
            return Err(CurateError::Config("k_max must be >= 1".into()));
        }
        if self.label.samples_per_model == 0 {
            return Err(CurateError::Config("samples_per_model must be >= 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Everything a curation run operates on.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    pub store: PairStore,
    pub ledger: Ledger,
    /// Pairs that form the initial seed pool.
    pub seed_ids: BTreeSet<PairId>,
    /// Flipped discards; kept out of the pool ledger and trained on only
    /// when the config asks for it.
    pub recycled: BTreeSet<PairId>,
    /// Tag of the embedding provider that produced the stored vectors.
    pub embed_tag: Option<String>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a pair and admits it to the unverified pool at iteration 0.
    pub fn add_pair(
        &mut self,
        pair: PreferencePair,
        attrs: Option<AttributeSet>,
        embeddings: Option<PairEmbeddings>,
        seed: bool,
    ) -> Result<(), CurateError> {
        let id = pair.id.clone();
        self.ledger.admit(&id, 0)?;
        if let Some(a) = attrs {
            self.store.set_attrs(a);
        }
        if let Some(e) = embeddings {
            self.store.set_embeddings(id.clone(), e);
        }
        self.store.insert(pair);
        if seed {
            self.seed_ids.insert(id);
        }
        Ok(())
    }

    /// Loads a synthetic world: seed and unverified pools, all unverified.
    pub fn from_world(world: &crate::eval::world::World) -> Result<Self, CurateError> {
        let mut ws = Workspace {
            embed_tag: Some(format!("synthetic/{}", world.spec.dim)),
            ..Workspace::new()
        };
        for (ids, seed) in [(&world.seed_ids, true), (&world.unverified_ids, false)] {
            for id in ids {
                let pair = world.store.get(id).expect("world ids are stored").clone();
                ws.add_pair(
                    pair,
                    world.store.attrs(id).cloned(),
                    world.store.embeddings(id).cloned(),
                    seed,
                )?;
            }
        }
        Ok(ws)
    }

    pub fn embedded(&self, ids: &[PairId]) -> Result<Vec<EmbeddedPair>, CurateError> {
        ids.iter()
            .map(|id| {
                self.store
                    .embedded_pair(id)
                    .ok_or_else(|| CurateError::MissingEmbedding(id.clone()))
            })
            .collect()
    }

    /// Reward-model training data: silver and retained, plus the recycled
    /// shard when asked.
    pub fn training_ids(&self, include_recycled: bool) -> Vec<PairId> {
        let mut ids = self.ledger.snapshot(Pool::Silver);
        ids.extend(self.ledger.snapshot(Pool::Retained));
        if include_recycled {
            ids.extend(self.recycled.iter().cloned());
        }
        ids
    }

    /// Index over the context embeddings of the given pairs. Pairs without
    /// embeddings are left out.
    pub fn context_index(&self, ids: &[PairId]) -> Result<SimilarityIndex, CurateError> {
        // An empty index still needs the store's dim so queries against it
        // come back empty instead of failing.
        let dim = ids
            .iter()
            .find_map(|id| self.store.embeddings(id))
            .or_else(|| self.store.all_embeddings().next().map(|(_, e)| e))
            .map(|e| e.context.dim())
            .unwrap_or(1);
        let mut idx = SimilarityIndex::new(dim);
        for id in ids {
            if let Some(e) = self.store.embeddings(id) {
                idx.insert(id.clone(), e.context.clone())?;
            }
        }
        Ok(idx)
    }
}

/// Where human-verification work goes.
pub trait HumanChannel {
    /// Hands `pairs` to human verifiers and returns whatever verdicts are
    /// available now. A queue-backed channel returns none; they arrive later
    /// through the annotation service.
    fn route(&mut self, pairs: &[PairId], store: &PairStore) -> Vec<Verdict>;
}

/// Routes nothing anywhere.
pub struct NoHumans;

impl HumanChannel for NoHumans {
    fn route(&mut self, _: &[PairId], _: &PairStore) -> Vec<Verdict> {
        Vec::new()
    }
}

/// Simulated verifiers answering from an oracle with a fixed accuracy.
pub struct StubHuman {
    pub oracle: Arc<dyn PreferenceOracle>,
    pub accuracy: f64,
    pub seed: u64,
    pub annotator: String,
}

impl StubHuman {
    pub fn new(oracle: Arc<dyn PreferenceOracle>, seed: u64) -> Self {
        StubHuman {
            oracle,
            accuracy: 1.0,
            seed,
            annotator: "stub-human".into(),
        }
    }
}

impl HumanChannel for StubHuman {
    fn route(&mut self, pairs: &[PairId], store: &PairStore) -> Vec<Verdict> {
        pairs
            .iter()
            .filter_map(|id| {
                let pair = store.get(id)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, id.as_str()));
                let outcome = match self.oracle.chosen_is_better(pair) {
                    None => Outcome::Discard,
                    Some(truth) => {
                        if truth == rng.random_bool(self.accuracy) {
                            Outcome::Confirm
                        } else {
                            Outcome::Swap
                        }
                    }
                };
                Some(Verdict::human(id.clone(), self.annotator.clone(), outcome))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanCounts {
    pub confirmed: usize,
    pub swapped: usize,
    pub discarded: usize,
    /// Verdicts for pairs that were no longer unverified or already had one.
    pub skipped: usize,
}

/// Applies human verdicts to unverified pairs: confirm and swap go to gold
/// (swap stores the flipped orientation), discard goes to discarded.
pub fn apply_human_verdicts(
    ws: &mut Workspace,
    verdicts: Vec<Verdict>,
    iteration: u32,
) -> Result<HumanCounts, CurateError> {
    let mut c = HumanCounts::default();
    for v in verdicts {
        let id = v.pair_id.clone();
        if ws.ledger.pool_of(&id) != Some(Pool::Unverified) || ws.ledger.human_verdict(&id).is_some() {
            c.skipped += 1;
            continue;
        }
        let outcome = v.outcome;
        ws.ledger.record_verdict(v)?;
        let (to, reason) = match outcome {
            Outcome::Confirm => (Pool::Gold, Reason::HumanConfirm),
            Outcome::Swap => (Pool::Gold, Reason::HumanSwap),
            Outcome::Discard => (Pool::Discarded, Reason::HumanDiscard),
        };
        if ws.ledger.transition(&id, Pool::Unverified, to, reason, iteration)? == Applied::Appended {
            match outcome {
                Outcome::Confirm => c.confirmed += 1,
                Outcome::Swap => {
                    ws.store.swap_orientation(&id);
                    c.swapped += 1;
                }
                Outcome::Discard => c.discarded += 1,
            }
        }
    }
    Ok(c)
}

/// Deterministically picks `round(fraction·n)` of `ids` by keyed hash order.
/// Returns (picked, rest), each in the input order.
pub fn split_by_hash(ids: &[PairId], fraction: f64, seed: u64, key: &str) -> (Vec<PairId>, Vec<PairId>) {
    let n = (fraction * ids.len() as f64).round() as usize;
    let mut ranked: Vec<(u64, usize)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let h = stable_hash64(format!("{key}/{id}").as_bytes()) ^ seed;
            (stable_hash64(&h.to_le_bytes()), i)
        })
        .collect();
    ranked.sort_unstable();
    let chosen: BTreeSet<usize> = ranked[..n.min(ids.len())].iter().map(|(_, i)| *i).collect();
    let mut picked = Vec::new();
    let mut rest = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        if chosen.contains(&i) {
            picked.push(id.clone());
        } else {
            rest.push(id.clone());
        }
    }
    (picked, rest)
}
