use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    assemble_task, cross_model_merge, intra_model_aggregate, Exemplar, JudgeError, JudgeProvider,
    ModelVerdict, VoteRecord, MAX_EXEMPLARS,
};
use crate::embed::SimilarityIndex;
use crate::ledger::{Applied, Ledger, LedgerError, Outcome, Pool, Reason, Verdict, VerdictSource};
use crate::pair::PairId;
use crate::store::PairStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub rng_seed: u64,
    pub samples_per_model: usize,
    pub max_in_flight: usize,
    /// Extra attempts per provider call on retryable errors.
    pub retries: usize,
    pub retry_backoff_ms: u64,
    pub exemplars: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            rng_seed: 0,
            samples_per_model: 5,
            max_in_flight: 8,
            retries: 2,
            retry_backoff_ms: 200,
            exemplars: MAX_EXEMPLARS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub pair_id: PairId,
    pub verdict: ModelVerdict,
}

#[derive(Clone, Debug, Default)]
pub struct LabelOutcome {
    /// Per-model vote records, in target order then provider order.
    pub records: Vec<VoteRecord>,
    /// Merged verdicts, in target order.
    pub decisions: Vec<Decision>,
    /// Pairs whose provider calls failed after retries; they stay where
    /// they are and can be retried later.
    pub deferred: Vec<PairId>,
    /// Pairs that cannot be judged because their attributes are missing.
    pub missing_attrs: Vec<PairId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub chosen_stands: usize,
    pub swapped: usize,
    pub abstained: usize,
}

enum PairResult {
    Done(Vec<VoteRecord>, ModelVerdict),
    Deferred,
    MissingAttrs,
    Unknown,
}

fn call_with_retry(
    provider: &dyn JudgeProvider,
    task: &super::JudgeTask,
    cfg: &LabelConfig,
) -> Result<Vec<super::Vote>, JudgeError> {
    let mut attempt = 0;
    loop {
        match provider.sample(task, cfg.samples_per_model) {
            Ok(v) => return Ok(v),
            Err(JudgeError::Provider { retryable: true, .. }) if attempt < cfg.retries => {
                std::thread::sleep(Duration::from_millis(cfg.retry_backoff_ms << attempt));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

fn exemplars_for(
    id: &PairId,
    store: &PairStore,
    gold_index: &SimilarityIndex,
    k: usize,
) -> Vec<Exemplar> {
    let Some(ctx) = store.embeddings(id).map(|e| &e.context) else {
        return Vec::new();
    };
    // Dimension mismatches leave the prompt without exemplars.
    let hits = gold_index.top_k(ctx, k).unwrap_or_default();
    hits.into_iter()
        .filter(|(gid, _)| gid != id)
        .filter_map(|(gid, cosine)| {
            Some(Exemplar {
                pair: store.get(&gid)?.clone(),
                attrs: store.attrs(&gid).cloned(),
                cosine,
            })
        })
        .collect()
}

fn label_one(
    id: &PairId,
    store: &PairStore,
    gold_index: &SimilarityIndex,
    providers: &[Arc<dyn JudgeProvider>],
    cfg: &LabelConfig,
) -> PairResult {
    let Some(pair) = store.get(id) else {
        return PairResult::Unknown;
    };
    let exemplars = exemplars_for(id, store, gold_index, cfg.exemplars.min(MAX_EXEMPLARS));
    let task = match assemble_task(pair, store.attrs(id), exemplars, cfg.rng_seed) {
        Ok(t) => t,
        Err(_) => return PairResult::MissingAttrs,
    };
    let mut records = Vec::with_capacity(providers.len());
    for p in providers {
        let samples = match call_with_retry(p.as_ref(), &task, cfg) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("deferring {id}: {e}");
                return PairResult::Deferred;
            }
        };
        let model_verdict = intra_model_aggregate(&samples, task.permutation);
        records.push(VoteRecord {
            pair_id: id.clone(),
            model_id: p.model_id().to_string(),
            permutation: task.permutation,
            samples,
            model_verdict,
        });
    }
    let merged = cross_model_merge(&records.iter().map(|r| r.model_verdict).collect::<Vec<_>>());
    PairResult::Done(records, merged)
}

/// Judges `targets` with every provider. Up to `max_in_flight` pairs are
/// processed concurrently; results are returned in target order so the
/// outcome does not depend on scheduling.
pub fn label_batch(
    targets: &[PairId],
    store: &PairStore,
    gold_index: &SimilarityIndex,
    providers: &[Arc<dyn JudgeProvider>],
    cfg: &LabelConfig,
) -> LabelOutcome {
    let slots: Vec<Mutex<Option<PairResult>>> = targets.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.max_in_flight.clamp(1, targets.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(id) = targets.get(i) else { break };
                let r = label_one(id, store, gold_index, providers, cfg);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });

    let mut out = LabelOutcome::default();
    for (id, slot) in targets.iter().zip(slots) {
        match slot.into_inner().expect("slot lock").expect("every slot filled") {
            PairResult::Done(records, verdict) => {
                out.records.extend(records);
                out.decisions.push(Decision {
                    pair_id: id.clone(),
                    verdict,
                });
            }
            PairResult::Deferred => out.deferred.push(id.clone()),
            PairResult::MissingAttrs => out.missing_attrs.push(id.clone()),
            PairResult::Unknown => log::warn!("label target {id} is not in the store"),
        }
    }
    out
}

/// Applies merged verdicts to pairs currently in `from`: chosen-stands goes
/// to silver as is, swap goes to silver flipped, abstain is discarded.
/// A transition already applied in this iteration is skipped, and so is its
/// flip, so re-applying the same outcome is harmless.
pub fn apply_labels(
    decisions: &[Decision],
    store: &mut PairStore,
    ledger: &mut Ledger,
    from: Pool,
    iteration: u32,
) -> Result<LabelCounts, LedgerError> {
    let mut counts = LabelCounts::default();
    for d in decisions {
        let (to, reason, outcome) = match d.verdict {
            ModelVerdict::ChosenStands => (Pool::Silver, Reason::JudgeLabel, Outcome::Confirm),
            ModelVerdict::Swap => (Pool::Silver, Reason::JudgeSwap, Outcome::Swap),
            ModelVerdict::Abstain => (Pool::Discarded, Reason::JudgeAbstain, Outcome::Discard),
        };
        if ledger.transition(&d.pair_id, from, to, reason, iteration)? == Applied::Replayed {
            continue;
        }
        ledger.record_verdict(Verdict {
            pair_id: d.pair_id.clone(),
            source: VerdictSource::Judge {
                model_id: "ensemble".into(),
            },
            outcome,
            confidence: None,
            rationale: None,
            ts: 0,
        })?;
        match d.verdict {
            ModelVerdict::ChosenStands => counts.chosen_stands += 1,
            ModelVerdict::Swap => {
                store.swap_orientation(&d.pair_id);
                counts.swapped += 1;
            }
            ModelVerdict::Abstain => counts.abstained += 1,
        }
    }
    Ok(counts)
}
