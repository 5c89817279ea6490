use std::sync::Arc;

use prefcurate::btrm::TrainConfig;
use prefcurate::curate::*;
use prefcurate::eval::world::{generate_world, World, WorldSpec};
use prefcurate::judge::{JudgeProvider, LabelConfig, PreferenceOracle, StubJudge};
use prefcurate::ledger::{Pool, Reason};
use prefcurate::rundir::RunDir;

fn world(seed: u64, unverified: usize) -> World {
    generate_world(&WorldSpec {
        rng_seed: seed,
        dim: 32,
        min_margin: 0.05,
        unverified_pairs: unverified,
        heldout_pairs: 1000,
        validation_pairs: 200,
        ..Default::default()
    })
    .unwrap()
}

fn config(seed: u64) -> CurateConfig {
    CurateConfig {
        rng_seed: seed,
        seed_human_fraction: 0.2,
        train: TrainConfig {
            learning_rate: 0.5,
            batch_size: 64,
            epochs: 10,
            ..TrainConfig::default()
        },
        label: LabelConfig {
            retry_backoff_ms: 1,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn judges(w: &World) -> Vec<Arc<dyn JudgeProvider>> {
    (0..3)
        .map(|i| Arc::new(StubJudge::new(format!("stub-{i}"), 0.95, 11, w.oracle.clone())) as Arc<dyn JudgeProvider>)
        .collect()
}

fn seeded(w: &World, cfg: &CurateConfig) -> Workspace {
    let mut ws = Workspace::from_world(w).unwrap();
    let mut human = StubHuman::new(w.oracle.clone(), 5);
    initialize_seed(&mut ws, cfg, &mut human, &judges(w)).unwrap();
    ws
}

#[test]
fn best_model_improves_across_three_iterations() {
    let w = world(1, 3000);
    let cfg = config(7);
    let mut ws = seeded(&w, &cfg);
    let js = judges(&w);
    let mut human = StubHuman::new(w.oracle.clone(), 5);
    let mut st = Stage1State::default();
    let mut models = Vec::new();
    for _ in 0..3 {
        let out = stage1_iteration(&mut ws, &mut st, &cfg, &mut human, &js, Some(&w.validation)).unwrap();
        assert!(!out.report.no_new_data);
        models.push(st.best_model.clone().unwrap());
    }
    assert_eq!(st.iteration, 3);
    assert_eq!(st.sanity_scores.len(), 3);
    // one fixed yardstick: the gold set as it stands after the last round
    let gold = ws.embedded(&ws.ledger.snapshot(Pool::Gold)).unwrap();
    let on_gold: Vec<f64> = models.iter().map(|m| m.pairwise_accuracy(&gold).unwrap()).collect();
    let on_truth: Vec<f64> = models.iter().map(|m| m.pairwise_accuracy(&w.heldout).unwrap()).collect();
    for acc in [&on_gold, &on_truth] {
        assert!(acc.windows(2).all(|p| p[1] >= p[0]), "{on_gold:?} {on_truth:?}");
    }
}

#[test]
fn zero_human_ratio_leaves_gold_alone() {
    let w = world(2, 1500);
    let cfg = CurateConfig {
        human_ratio: 0.0,
        ..config(3)
    };
    let mut ws = seeded(&w, &cfg);
    let gold_before = ws.ledger.snapshot(Pool::Gold);
    let silver_before = ws.ledger.snapshot(Pool::Silver).len();
    let mut st = Stage1State::default();
    let out = stage1_iteration(&mut ws, &mut st, &cfg, &mut NoHumans, &judges(&w), None).unwrap();
    assert_eq!(out.report.human_routed, 0);
    assert_eq!(ws.ledger.snapshot(Pool::Gold), gold_before);
    assert!(ws.ledger.snapshot(Pool::Silver).len() > silver_before);
}

#[test]
fn empty_queue_sets_the_flag_and_changes_nothing() {
    let w = world(3, 0);
    let cfg = config(1);
    let mut ws = seeded(&w, &cfg);
    assert!(ws.ledger.snapshot(Pool::Unverified).is_empty());
    let events = ws.ledger.events().len();
    let mut st = Stage1State::default();
    let out = stage1_iteration(&mut ws, &mut st, &cfg, &mut NoHumans, &judges(&w), None).unwrap();
    assert!(out.report.no_new_data);
    assert!(out.queue.is_empty());
    assert_eq!(ws.ledger.events().len(), events);
    assert_eq!(st.iteration, 1);
}

#[test]
fn gold_model_learns_from_correct_human_verdicts() {
    let w = world(4, 0);
    let cfg = CurateConfig {
        seed_human_fraction: 0.5,
        ..config(2)
    };
    let ws = seeded(&w, &cfg);
    let a = train_gold_model(&ws, &cfg).unwrap();
    let b = train_gold_model(&ws, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(!a.eval_ids.is_empty());
    assert!(a.eval_accuracy >= 0.9, "{}", a.eval_accuracy);
    for id in a.train_ids.iter().chain(&a.eval_ids) {
        assert!(ws.ledger.human_verdict(id).is_some());
    }
}

#[test]
fn gold_model_refuses_a_member_without_human_verdict() {
    let w = world(4, 10);
    let cfg = config(2);
    let mut ws = seeded(&w, &cfg);
    let stray = ws.ledger.snapshot(Pool::Unverified)[0].clone();
    ws.ledger
        .transition(&stray, Pool::Unverified, Pool::Gold, Reason::GoldRetention, 1)
        .unwrap();
    match train_gold_model(&ws, &cfg) {
        Err(CurateError::GoldWithoutHumanVerdict(id)) => assert_eq!(id, stray),
        other => panic!("{other:?}"),
    }
}

#[test]
fn stage2_accounts_for_every_pair() {
    let w = world(5, 2000);
    let cfg = config(9);
    let mut ws = seeded(&w, &cfg);
    let mut st = Stage1State::default();
    let js = judges(&w);
    let mut human = StubHuman::new(w.oracle.clone(), 5);
    stage1_iteration(&mut ws, &mut st, &cfg, &mut human, &js, None).unwrap();
    let pool = ws.ledger.snapshot(Pool::Unverified);
    let before = ws.ledger.counts();
    let out = run_stage2(&mut ws, st.best_model.as_ref().unwrap(), &cfg, Some(&js), 2).unwrap();
    let r = &out.report;
    assert_eq!(r.input, pool.len());
    assert_eq!(r.confidence_pass + r.reannotation, r.input);
    assert_eq!(
        r.retained_confidence + r.retained_consistency + r.consistency_fail + r.judge_swapped + r.judge_abstained + r.deferred,
        r.input
    );
    let after = ws.ledger.counts();
    let grew = |p: Pool| after.get(&p).copied().unwrap_or(0) - before.get(&p).copied().unwrap_or(0);
    assert_eq!(grew(Pool::Retained), r.retained_confidence + r.retained_consistency);
    assert_eq!(ws.ledger.snapshot(Pool::Unverified).len(), r.deferred);
    // swapped pairs are stored in their corrected orientation
    let swapped: Vec<_> = ws
        .ledger
        .events()
        .iter()
        .filter(|e| e.reason == Reason::JudgeSwap && e.iteration == 2)
        .map(|e| e.pair_id.clone())
        .collect();
    let right = swapped
        .iter()
        .filter(|id| w.oracle.chosen_is_better(ws.store.get(id).unwrap()) == Some(true))
        .count();
    assert!(right as f64 >= 0.9 * swapped.len() as f64, "{right}/{}", swapped.len());
}

#[test]
fn recycling_twice_creates_nothing_new() {
    let w = world(6, 800);
    let cfg = config(4);
    let mut ws = seeded(&w, &cfg);
    let mut st = Stage1State::default();
    stage1_iteration(&mut ws, &mut st, &cfg, &mut NoHumans, &judges(&w), None).unwrap();
    run_stage2(&mut ws, st.best_model.as_ref().unwrap(), &cfg, None, 2).unwrap();
    let first = recycle_discarded(&mut ws);
    assert_eq!(first.discarded, ws.ledger.snapshot(Pool::Discarded).len());
    assert_eq!(first.created.len() + first.duplicates, first.discarded);
    for id in &first.created {
        let p = ws.store.get(id).unwrap();
        let orig = ws.store.get(p.flipped_from.as_ref().unwrap()).unwrap();
        assert_eq!((&p.chosen, &p.rejected), (&orig.rejected, &orig.chosen));
        assert!(ws.ledger.pool_of(id).is_none());
    }
    let second = recycle_discarded(&mut ws);
    assert!(second.created.is_empty());
    assert_eq!(ws.training_ids(true).len(), ws.training_ids(false).len() + first.created.len());
}

fn pipeline(seed: u64) -> Workspace {
    let w = world(8, 600);
    let cfg = config(seed);
    let mut ws = seeded(&w, &cfg);
    let js = judges(&w);
    let mut human = StubHuman::new(w.oracle.clone(), 5);
    let mut st = Stage1State::default();
    for _ in 0..2 {
        stage1_iteration(&mut ws, &mut st, &cfg, &mut human, &js, None).unwrap();
    }
    run_stage2(&mut ws, st.best_model.as_ref().unwrap(), &cfg, Some(&js), 3).unwrap();
    recycle_discarded(&mut ws);
    ws
}

#[test]
fn identical_runs_write_identical_run_dirs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let rd = RunDir::new(dir);
        rd.create_layout().unwrap();
        rd.save_workspace(&pipeline(21)).unwrap();
    }
    for rel in ["ledgers/pools.jsonl", "ledgers/verdicts.jsonl", "pairs/pairs.jsonl", "pairs/recycled.jsonl"] {
        let x = std::fs::read(a.path().join(rel)).unwrap();
        let y = std::fs::read(b.path().join(rel)).unwrap();
        assert!(x == y, "{rel} differs");
    }
    let back = RunDir::new(a.path()).load_workspace().unwrap();
    let orig = pipeline(21);
    for pool in Pool::ALL {
        assert_eq!(back.ledger.snapshot(pool), orig.ledger.snapshot(pool));
    }
    assert_eq!(back.recycled, orig.recycled);
}
