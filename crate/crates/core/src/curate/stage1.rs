use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{apply_human_verdicts, split_by_hash, CurateConfig, CurateError, HumanChannel, HumanCounts, Workspace};
use crate::btrm::{train, EmbeddedPair, RewardModel, TrainReport};
use crate::hash::derive_seed;
use crate::judge::{apply_labels, label_batch, JudgeProvider, LabelConfig, LabelCounts, VoteRecord};
use crate::ledger::Pool;
use crate::pair::PairId;
use crate::retrieval::{select_for_annotation, EvalItem, QueueEntry};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage1State {
    /// Number of completed Stage-1 iterations.
    pub iteration: u32,
    pub best_model: Option<RewardModel>,
    pub best_gold_accuracy: f64,
    /// (iteration, validation accuracy). Recorded for reference only; no
    /// decision ever reads it.
    pub sanity_scores: Vec<(u32, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed_pairs: usize,
    pub human: HumanCounts,
    pub judged: LabelCounts,
    pub deferred: usize,
    pub missing_attrs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub train_pairs: usize,
    pub gold_pairs: usize,
    pub best_gold_accuracy: f64,
    pub best_step: usize,
    pub queue_len: usize,
    pub human_routed: usize,
    pub judge_routed: usize,
    pub human: HumanCounts,
    pub judged: LabelCounts,
    pub deferred: usize,
    pub missing_attrs: usize,
    pub skipped_eval_pairs: usize,
    /// The annotation queue came back empty; pools are unchanged.
    pub no_new_data: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sanity: Option<f64>,
}

pub struct IterationOutcome {
    pub report: IterationReport,
    pub train: TrainReport,
    pub queue: Vec<QueueEntry>,
    pub votes: Vec<VoteRecord>,
}

fn label_config(cfg: &CurateConfig, iteration: u32) -> LabelConfig {
    LabelConfig {
        rng_seed: derive_seed(cfg.rng_seed, &format!("judge/{iteration}")),
        ..cfg.label.clone()
    }
}

fn judge_slice(
    ws: &mut Workspace,
    ids: &[PairId],
    judges: &[Arc<dyn JudgeProvider>],
    cfg: &CurateConfig,
    iteration: u32,
) -> Result<(LabelCounts, Vec<VoteRecord>, usize, usize), CurateError> {
    if ids.is_empty() || judges.is_empty() {
        return Ok((LabelCounts::default(), Vec::new(), 0, 0));
    }
    let gold = ws.ledger.snapshot(Pool::Gold);
    let gold_index = ws.context_index(&gold)?;
    let out = label_batch(ids, &ws.store, &gold_index, judges, &label_config(cfg, iteration));
    let counts = apply_labels(&out.decisions, &mut ws.store, &mut ws.ledger, Pool::Unverified, iteration)?;
    Ok((counts, out.records, out.deferred.len(), out.missing_attrs.len()))
}

/// Verifies the seed pool: a hash-chosen share goes to humans (gold), the
/// rest to the judges (silver) with the fresh gold as exemplars. Pairs
/// already out of the unverified pool are left alone, so this is safe to
/// re-run.
pub fn initialize_seed(
    ws: &mut Workspace,
    cfg: &CurateConfig,
    human: &mut dyn HumanChannel,
    judges: &[Arc<dyn JudgeProvider>],
) -> Result<(SeedReport, Vec<VoteRecord>), CurateError> {
    cfg.validate()?;
    let pending: Vec<PairId> = ws
        .seed_ids
        .iter()
        .filter(|id| ws.ledger.pool_of(id) == Some(Pool::Unverified))
        .cloned()
        .collect();
    let (to_humans, to_judges) = split_by_hash(&pending, cfg.seed_human_fraction, cfg.rng_seed, "seed");
    let verdicts = human.route(&to_humans, &ws.store);
    let human_counts = apply_human_verdicts(ws, verdicts, 0)?;
    let (judged, votes, deferred, missing_attrs) = judge_slice(ws, &to_judges, judges, cfg, 0)?;
    Ok((
        SeedReport {
            seed_pairs: pending.len(),
            human: human_counts,
            judged,
            deferred,
            missing_attrs,
        },
        votes,
    ))
}

/// One train → retrieve → label round.
///
/// `validation` is the frozen sanity-check set; its score is recorded in
/// the state and never consulted.
pub fn stage1_iteration(
    ws: &mut Workspace,
    state: &mut Stage1State,
    cfg: &CurateConfig,
    human: &mut dyn HumanChannel,
    judges: &[Arc<dyn JudgeProvider>],
    validation: Option<&[EmbeddedPair]>,
) -> Result<IterationOutcome, CurateError> {
    cfg.validate()?;
    let iteration = state.iteration + 1;
    let silver_ids = ws.training_ids(cfg.include_recycled);
    if silver_ids.is_empty() {
        return Err(CurateError::EmptyPool(Pool::Silver));
    }
    let gold_ids = ws.ledger.snapshot(Pool::Gold);
    if gold_ids.is_empty() {
        return Err(CurateError::EmptyPool(Pool::Gold));
    }

    // Step 1: train, keep the best-on-gold checkpoint.
    let silver = ws.embedded(&silver_ids)?;
    let gold = ws.embedded(&gold_ids)?;
    let train_cfg = crate::btrm::TrainConfig {
        rng_seed: derive_seed(cfg.rng_seed, &format!("train/{iteration}")),
        ..cfg.train.clone()
    };
    let mut tr = train(&silver, &gold, &train_cfg)?;
    tr.model.trained_on = iteration;
    let model = tr.model.clone();

    // Step 2: gold mistakes drive retrieval from the unverified pool.
    let eval_items: Vec<EvalItem> = gold_ids
        .iter()
        .zip(&gold)
        .map(|(id, e)| EvalItem {
            pair_id: id.clone(),
            chosen: e.chosen.clone(),
            rejected: e.rejected.clone(),
            context: ws
                .store
                .attrs(id)
                .and(ws.store.embeddings(id))
                .map(|x| x.context.clone()),
        })
        .collect();
    let unverified = ws.ledger.snapshot(Pool::Unverified);
    let index = ws.context_index(&unverified)?;
    let selection = select_for_annotation(&model, &eval_items, &index, cfg.k_max)?;
    let queue_ids: Vec<PairId> = selection.queue.iter().map(|q| q.pair_id.clone()).collect();

    // Step 3: humans take a share, judges take the rest.
    let (to_humans, to_judges) =
        split_by_hash(&queue_ids, cfg.human_ratio, cfg.rng_seed, &format!("route/{iteration}"));
    let verdicts = human.route(&to_humans, &ws.store);
    let human_counts = apply_human_verdicts(ws, verdicts, iteration)?;
    let (judged, votes, deferred, missing_attrs) = judge_slice(ws, &to_judges, judges, cfg, iteration)?;

    let sanity = match validation {
        Some(v) if !v.is_empty() => Some(model.pairwise_accuracy(v)?),
        _ => None,
    };
    if let Some(s) = sanity {
        state.sanity_scores.push((iteration, s));
    }
    state.iteration = iteration;
    state.best_gold_accuracy = tr.best_gold_accuracy;
    state.best_model = Some(model);

    Ok(IterationOutcome {
        report: IterationReport {
            iteration,
            train_pairs: silver.len(),
            gold_pairs: gold.len(),
            best_gold_accuracy: tr.best_gold_accuracy,
            best_step: tr.best_step,
            queue_len: queue_ids.len(),
            human_routed: to_humans.len(),
            judge_routed: to_judges.len(),
            human: human_counts,
            judged,
            deferred,
            missing_attrs,
            skipped_eval_pairs: selection.skipped,
            no_new_data: queue_ids.is_empty(),
            sanity,
        },
        train: tr,
        queue: selection.queue,
        votes,
    })
}
