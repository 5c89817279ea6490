use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{split_by_hash, CurateConfig, CurateError, Workspace};
use crate::btrm::{train, RewardModel, TrainConfig};
use crate::hash::derive_seed;
use crate::ingest::Deduper;
use crate::judge::{label_batch, JudgeProvider, LabelConfig, ModelVerdict, VoteRecord};
use crate::ledger::{Ledger, Outcome, Pool, Reason, Verdict, VerdictSource};
use crate::pair::{PairId, PreferencePair};
use crate::store::PairStore;

fn p_of(model: &RewardModel, store: &PairStore, id: &PairId) -> Result<f64, CurateError> {
    let e = store
        .embeddings(id)
        .ok_or_else(|| CurateError::MissingEmbedding(id.clone()))?;
    Ok(model.predict(&e.chosen, &e.rejected)?)
}

/// Splits `ids` into (p > 0.5, p <= 0.5) under `best`. Input order is kept
/// within each side.
pub fn stage2_confidence_filter(
    best: &RewardModel,
    ids: &[PairId],
    store: &PairStore,
) -> Result<(Vec<PairId>, Vec<PairId>), CurateError> {
    let mut pass = Vec::new();
    let mut reannotate = Vec::new();
    for id in ids {
        if p_of(best, store, id)? > 0.5 {
            pass.push(id.clone());
        } else {
            reannotate.push(id.clone());
        }
    }
    Ok((pass, reannotate))
}

/// The retention rule: the gold model agrees, and so does the best model
/// or the judges.
pub fn consistent(gold_p: f64, best_p: f64, judge: Option<ModelVerdict>) -> bool {
    gold_p > 0.5 && (best_p > 0.5 || judge == Some(ModelVerdict::ChosenStands))
}

/// Splits `ids` into (retained, discarded) by [`consistent`]. A pair absent
/// from `judge` (or `judge = None`) is decided by the best-model arm alone.
pub fn stage2_consistency_retain(
    gold: &RewardModel,
    best: &RewardModel,
    judge: Option<&BTreeMap<PairId, ModelVerdict>>,
    ids: &[PairId],
    store: &PairStore,
) -> Result<(Vec<PairId>, Vec<PairId>), CurateError> {
    let mut retained = Vec::new();
    let mut discarded = Vec::new();
    for id in ids {
        let verdict = judge.and_then(|m| m.get(id).copied());
        if consistent(p_of(gold, store, id)?, p_of(best, store, id)?, verdict) {
            retained.push(id.clone());
        } else {
            discarded.push(id.clone());
        }
    }
    Ok((retained, discarded))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoldModel {
    pub model: RewardModel,
    pub train_ids: Vec<PairId>,
    pub eval_ids: Vec<PairId>,
    pub eval_accuracy: f64,
}

/// Fits a reward model on human-verified gold only. A gold member without a
/// human verdict is an error, not a silent skip.
pub fn train_gold_model(ws: &Workspace, cfg: &CurateConfig) -> Result<GoldModel, CurateError> {
    let gold = ws.ledger.snapshot(Pool::Gold);
    if let Some(bad) = gold.iter().find(|id| ws.ledger.human_verdict(id).is_none()) {
        return Err(CurateError::GoldWithoutHumanVerdict(bad.clone()));
    }
    if gold.len() < cfg.min_gold.max(2) {
        return Err(CurateError::InsufficientGold {
            have: gold.len(),
            need: cfg.min_gold.max(2),
        });
    }
    let (mut eval_ids, mut train_ids) =
        split_by_hash(&gold, cfg.gold_holdout_fraction, cfg.rng_seed, "gold-model");
    if eval_ids.is_empty() {
        eval_ids.push(train_ids.pop().expect("at least two gold pairs"));
    }
    if train_ids.is_empty() {
        train_ids.push(eval_ids.pop().expect("at least two gold pairs"));
    }
    let tcfg = TrainConfig {
        rng_seed: derive_seed(cfg.rng_seed, "gold-model"),
        ..cfg.train.clone()
    };
    let report = train(&ws.embedded(&train_ids)?, &ws.embedded(&eval_ids)?, &tcfg)?;
    Ok(GoldModel {
        model: report.model,
        train_ids,
        eval_ids,
        eval_accuracy: report.best_gold_accuracy,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub input: usize,
    pub confidence_pass: usize,
    pub reannotation: usize,
    pub judge_swapped: usize,
    pub judge_abstained: usize,
    pub judge_confirmed: usize,
    /// Judge calls failed; these pairs stay unverified.
    pub deferred: usize,
    pub retained_confidence: usize,
    pub retained_consistency: usize,
    pub consistency_fail: usize,
    pub used_judges: bool,
}

pub struct Stage2Outcome {
    pub report: Stage2Report,
    pub gold_model: GoldModel,
    pub votes: Vec<VoteRecord>,
}

fn judge_verdict(ledger: &mut Ledger, id: &PairId, outcome: Outcome) -> Result<(), CurateError> {
    ledger.record_verdict(Verdict {
        pair_id: id.clone(),
        source: VerdictSource::Judge {
            model_id: "ensemble".into(),
        },
        outcome,
        confidence: None,
        rationale: None,
        ts: 0,
    })?;
    Ok(())
}

/// Runs the whole Stage-2 sweep over the unverified pool.
///
/// 1. Confidence filter under `best`.
/// 2. With judges, the low-confidence side is judge-labeled: swaps join
///    silver flipped, abstentions are discarded, confirmations go on to the
///    consistency check with the judge arm available.
/// 3. Every remaining candidate must satisfy [`consistent`] against a
///    freshly trained gold model; survivors are retained, the rest
///    discarded.
pub fn run_stage2(
    ws: &mut Workspace,
    best: &RewardModel,
    cfg: &CurateConfig,
    judges: Option<&[Arc<dyn JudgeProvider>]>,
    iteration: u32,
) -> Result<Stage2Outcome, CurateError> {
    cfg.validate()?;
    let gold_model = train_gold_model(ws, cfg)?;
    let pool = ws.ledger.snapshot(Pool::Unverified);
    let mut report = Stage2Report {
        input: pool.len(),
        ..Default::default()
    };
    let (pass, reannotate) = stage2_confidence_filter(best, &pool, &ws.store)?;
    report.confidence_pass = pass.len();
    report.reannotation = reannotate.len();

    let mut judge_map: BTreeMap<PairId, ModelVerdict> = BTreeMap::new();
    let mut votes = Vec::new();
    let mut candidates = pass.clone();
    match judges {
        Some(j) if !j.is_empty() && !reannotate.is_empty() => {
            report.used_judges = true;
            let gold_index = ws.context_index(&ws.ledger.snapshot(Pool::Gold))?;
            let lcfg = LabelConfig {
                rng_seed: derive_seed(cfg.rng_seed, &format!("judge/stage2/{iteration}")),
                ..cfg.label.clone()
            };
            let out = label_batch(&reannotate, &ws.store, &gold_index, j, &lcfg);
            votes = out.records;
            report.deferred = out.deferred.len();
            // Pairs without attributes cannot be judged; they face the
            // consistency check on the best-model arm alone.
            candidates.extend(out.missing_attrs);
            for d in out.decisions {
                match d.verdict {
                    ModelVerdict::Swap => {
                        ws.ledger
                            .transition(&d.pair_id, Pool::Unverified, Pool::Silver, Reason::JudgeSwap, iteration)?;
                        judge_verdict(&mut ws.ledger, &d.pair_id, Outcome::Swap)?;
                        ws.store.swap_orientation(&d.pair_id);
                        report.judge_swapped += 1;
                    }
                    ModelVerdict::Abstain => {
                        ws.ledger.transition(
                            &d.pair_id,
                            Pool::Unverified,
                            Pool::Discarded,
                            Reason::JudgeAbstain,
                            iteration,
                        )?;
                        judge_verdict(&mut ws.ledger, &d.pair_id, Outcome::Discard)?;
                        report.judge_abstained += 1;
                    }
                    ModelVerdict::ChosenStands => {
                        judge_verdict(&mut ws.ledger, &d.pair_id, Outcome::Confirm)?;
                        judge_map.insert(d.pair_id.clone(), d.verdict);
                        candidates.push(d.pair_id);
                        report.judge_confirmed += 1;
                    }
                }
            }
        }
        _ => {
            log::info!("stage 2 without judges: consistency uses the best-model arm only");
            candidates.extend(reannotate);
        }
    }
    candidates.sort();

    let (retained, discarded) =
        stage2_consistency_retain(&gold_model.model, best, Some(&judge_map), &candidates, &ws.store)?;
    let passed: std::collections::BTreeSet<&PairId> = pass.iter().collect();
    for id in &retained {
        let reason = if passed.contains(id) {
            report.retained_confidence += 1;
            Reason::ConfidencePass
        } else {
            report.retained_consistency += 1;
            Reason::ConsistencyPass
        };
        ws.ledger
            .transition(id, Pool::Unverified, Pool::Retained, reason, iteration)?;
    }
    for id in &discarded {
        ws.ledger
            .transition(id, Pool::Unverified, Pool::Discarded, Reason::ConsistencyFail, iteration)?;
    }
    report.consistency_fail = discarded.len();
    Ok(Stage2Outcome {
        report,
        gold_model,
        votes,
    })
}

/// Flips each pair and keeps the ones whose flipped key is new to `seen`.
/// Returns the new pairs and how many were dropped as duplicates.
pub fn recycle_flipped(pairs: &[PreferencePair], seen: &mut Deduper) -> (Vec<PreferencePair>, usize) {
    let mut out = Vec::new();
    let mut dropped = 0;
    for p in pairs {
        let f = p.flipped();
        if seen.admit(&f) {
            out.push(f);
        } else {
            dropped += 1;
        }
    }
    (out, dropped)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecycleReport {
    pub discarded: usize,
    pub created: Vec<PairId>,
    pub duplicates: usize,
}

/// Flips every discarded pair into the recycled shard. Re-running creates
/// nothing new: the second flip collides with the first.
pub fn recycle_discarded(ws: &mut Workspace) -> RecycleReport {
    let discarded: Vec<PreferencePair> = ws
        .ledger
        .snapshot(Pool::Discarded)
        .iter()
        .filter_map(|id| ws.store.get(id).cloned())
        .collect();
    let mut seen = Deduper::with_existing(ws.store.pairs());
    let (fresh, duplicates) = recycle_flipped(&discarded, &mut seen);
    let mut created = Vec::with_capacity(fresh.len());
    for p in fresh {
        let src = p.flipped_from.clone().expect("flipped pairs record their source");
        if let Some(mut a) = ws.store.attrs(&src).cloned() {
            a.pair_id = p.id.clone();
            ws.store.set_attrs(a);
        }
        if let Some(mut e) = ws.store.embeddings(&src).cloned() {
            e.swap_orientation();
            ws.store.set_embeddings(p.id.clone(), e);
        }
        created.push(p.id.clone());
        ws.recycled.insert(p.id.clone());
        ws.store.insert(p);
    }
    RecycleReport {
        discarded: discarded.len(),
        created,
        duplicates,
    }
}
