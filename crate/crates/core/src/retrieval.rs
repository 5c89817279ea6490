//! Error-driven adaptive retrieval.
//!
//! Every gold-validated pair gets a retrieval budget from the reward model's
//! confidence `p` on it: the full `k_max` when the model is wrong
//! (`p <= 0.5`), shrinking to `⌈k_max·(1 - p)⌉` as it becomes confidently
//! right. The unverified pairs most similar to each (conversation,
//! attributes) context are queued for labeling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::btrm::{BtrmError, RewardModel};
use crate::embed::{Embedding, IndexError, SimilarityIndex};
use crate::pair::PairId;

pub const DEFAULT_K_MAX: usize = 8;

const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("k_max must be >= 1")]
    ZeroKMax,
    #[error(transparent)]
    Model(#[from] BtrmError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Retrieval budget for one source pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBudget {
    pub pair_id: PairId,
    pub p: f64,
    pub k: usize,
    pub k_max: usize,
}

/// `k_max` if `p <= 0.5`, else `⌈k_max·(1 - p)⌉`. At `p = 1` this is 0.
pub fn dynamic_k(p: f64, k_max: usize) -> Result<usize, RetrievalError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(RetrievalError::ConfidenceOutOfRange(p));
    }
    if k_max == 0 {
        return Err(RetrievalError::ZeroKMax);
    }
    if p <= 0.5 {
        return Ok(k_max);
    }
    // Products that land within float error of an integer (10·(1 - 0.7)
    // is 3.0000000000000004) are taken as that integer.
    let x = k_max as f64 * (1.0 - p);
    let k = (x - SNAP).ceil().max(0.0) as usize;
    Ok(k.min(k_max))
}

/// A gold pair that drives retrieval.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub pair_id: PairId,
    pub chosen: Embedding,
    pub rejected: Embedding,
    /// Embedding of (conversation, attributes); `None` when attributes are
    /// missing, in which case the item is skipped.
    pub context: Option<Embedding>,
}

/// One line of the annotation queue file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub pair_id: PairId,
    pub source_pair_id: PairId,
    pub source_p: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Selection {
    pub queue: Vec<QueueEntry>,
    pub budgets: Vec<RetrievalBudget>,
    /// Eval items skipped for missing context embeddings.
    pub skipped: usize,
}

/// Earlier in the queue: lower source p, then higher cosine, then lower id.
fn priority(a: &QueueEntry, b: &QueueEntry) -> std::cmp::Ordering {
    a.source_p
        .total_cmp(&b.source_p)
        .then_with(|| b.cosine.total_cmp(&a.cosine))
        .then_with(|| a.pair_id.cmp(&b.pair_id))
}

/// Builds the annotation queue from a model, the gold eval items, and an
/// index over the unverified pool only.
pub fn select_for_annotation(
    model: &RewardModel,
    eval_set: &[EvalItem],
    index: &SimilarityIndex,
    k_max: usize,
) -> Result<Selection, RetrievalError> {
    if k_max == 0 {
        return Err(RetrievalError::ZeroKMax);
    }
    let mut best: BTreeMap<PairId, QueueEntry> = BTreeMap::new();
    let mut budgets = Vec::with_capacity(eval_set.len());
    let mut skipped = 0;
    for item in eval_set {
        let Some(context) = &item.context else {
            log::warn!("eval pair {} has no context embedding; skipped", item.pair_id);
            skipped += 1;
            continue;
        };
        let p = model.predict(&item.chosen, &item.rejected)?;
        let k = dynamic_k(p, k_max)?;
        budgets.push(RetrievalBudget {
            pair_id: item.pair_id.clone(),
            p,
            k,
            k_max,
        });
        for (id, cosine) in index.top_k(context, k)? {
            let entry = QueueEntry {
                pair_id: id.clone(),
                source_pair_id: item.pair_id.clone(),
                source_p: p,
                cosine,
            };
            match best.get(&id) {
                Some(cur) if priority(cur, &entry).is_le() => {}
                _ => {
                    best.insert(id, entry);
                }
            }
        }
    }
    let mut queue: Vec<QueueEntry> = best.into_values().collect();
    queue.sort_by(priority);
    Ok(Selection {
        queue,
        budgets,
        skipped,
    })
}
