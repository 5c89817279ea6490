use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use prefcurate::btrm::{read_checkpoint, train as fit, write_checkpoint, EmbeddedPair, RewardModel, TrainConfig};
use prefcurate::curate::{
    initialize_seed, recycle_discarded, run_stage2, split_by_hash, stage1_iteration, HumanChannel,
    SeedReport, Stage1State, StubHuman, Workspace,
};
use prefcurate::embed::embed_pairs;
use prefcurate::eval::{embed_eval_set, load_eval_set};
use prefcurate::hash::derive_seed;
use prefcurate::ingest::{
    build_contamination_index, decontaminate as decontam, structural_check, ContaminationIndex, Deduper,
    RejectReason, RejectionRecord,
};
use prefcurate::jsonl;
use prefcurate::judge::{TrustLabels, VoteRecord};
use prefcurate::ledger::{Pool, Reason, Verdict};
use prefcurate::manifest::Stage;
use prefcurate::pair::{AttributeSet, PairId, PreferencePair};
use prefcurate::store::PairStore;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::context::{print_plan, Run};
use crate::error::CliError;
use crate::{DecontaminateArgs, GlobalArgs, IngestArgs, TrainArgs};

pub const STAGE1_STATE: &str = "stage1";
pub const SEED_STATE: &str = "seed";
pub const HUMAN_QUEUE: &str = "human";
pub const BEST: &str = "best";
pub const GOLD: &str = "gold";

/// A pair waiting for a human verdict through the annotation service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanTask {
    pub pair_id: PairId,
    pub iteration: u32,
}

fn notes<const N: usize>(items: [(&str, usize); N]) -> BTreeMap<String, u64> {
    items.into_iter().map(|(k, v)| (k.to_string(), v as u64)).collect()
}

fn require_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::user(format!("{what} {} does not exist", p.display())))
    }
}

/// Prompts of every `*.jsonl` file in `dir`: a `prompt` field, or the first
/// user turn of a `conversation`.
pub fn benchmark_prompts(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::user(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut prompts = Vec::new();
    for f in files {
        for (line, v) in jsonl::read_values(&f).map_err(|e| CliError::user(e.to_string()))? {
            let v = v.map_err(|e| CliError::user(format!("{}:{line}: {e}", f.display())))?;
            let prompt = v.get("prompt").and_then(|p| p.as_str()).map(str::to_string).or_else(|| {
                v.get("conversation")?
                    .as_array()?
                    .iter()
                    .find(|t| t.get("role").and_then(|r| r.as_str()) == Some("user"))?
                    .get("content")?
                    .as_str()
                    .map(str::to_string)
            });
            match prompt {
                Some(p) => prompts.push(p),
                None => log::warn!("{}:{line}: no prompt field or user turn", f.display()),
            }
        }
    }
    Ok(prompts)
}

fn contamination_index(dir: &Path) -> Result<ContaminationIndex, CliError> {
    let prompts = benchmark_prompts(dir)?;
    build_contamination_index(&prompts).map_err(|e| CliError::user(format!("{}: {e}", dir.display())))
}

pub fn ingest(g: &GlobalArgs, cfg: RunConfig, a: &IngestArgs) -> Result<(), CliError> {
    require_file(&a.input, "input")?;
    if let Some(b) = &a.benchmarks {
        require_file(b, "benchmark directory")?;
    }
    if g.dry_run {
        let mut steps = vec![
            format!("read raw records from {}", a.input.display()),
            "structural check and global dedup against the existing store".into(),
        ];
        if let Some(b) = &a.benchmarks {
            steps.push(format!("decontaminate against prompts in {}", b.display()));
        }
        steps.push(format!("route {:.0}% of new pairs to the seed pool", cfg.seed_fraction * 100.0));
        steps.push("write pairs/, attrs/, ledgers/pools.jsonl, reports/rejections.jsonl, a manifest".into());
        print_plan("ingest", &g.run_dir, &steps);
        return Ok(());
    }
    let run = Run::open(g, cfg)?;
    let mut ws = if run.rd.is_initialized() {
        run.load()?
    } else {
        Workspace::new()
    };
    let before = ws.ledger.counts();

    let lines = jsonl::read_values(&a.input).map_err(|e| CliError::user(e.to_string()))?;
    let n_read = lines.len();
    let mut rejections = Vec::new();
    let mut reject = |key: String, reason: RejectReason, detail: String, window: Option<String>| {
        rejections.push(RejectionRecord {
            key,
            reason,
            matched_window: window,
            detail,
        })
    };
    let mut seen = Deduper::with_existing(ws.store.pairs());
    let mut fresh: Vec<PreferencePair> = Vec::new();
    let mut attrs: HashMap<PairId, AttributeSet> = HashMap::new();
    for (line, v) in lines {
        let v = match v {
            Ok(v) => v,
            Err(e) => {
                reject(format!("line:{line}"), RejectReason::Malformed, e, None);
                continue;
            }
        };
        match structural_check(&v) {
            Err(r) => reject(format!("line:{line}"), r.reason, r.detail, None),
            Ok(i) if !seen.admit(&i.pair) => {
                reject(i.pair.id.to_string(), RejectReason::Duplicate, String::new(), None)
            }
            Ok(i) => {
                if let Some(at) = i.attrs {
                    attrs.insert(i.pair.id.clone(), at);
                }
                fresh.push(i.pair);
            }
        }
    }
    if let Some(b) = &a.benchmarks {
        let index = contamination_index(b)?;
        let (clean, removed) = decontam(fresh, &index).map_err(|e| CliError::internal(e.to_string()))?;
        for c in removed {
            reject(c.pair.id.to_string(), RejectReason::Contaminated, String::new(), Some(c.matched_window));
        }
        fresh = clean;
    }

    let ids: Vec<PairId> = fresh.iter().map(|p| p.id.clone()).collect();
    let (seed, _) = split_by_hash(&ids, run.cfg.seed_fraction, run.cfg.seed, "seed-pool");
    let seed: BTreeSet<PairId> = seed.into_iter().collect();
    let n_new = fresh.len();
    for p in fresh {
        let a = attrs.remove(&p.id);
        let is_seed = seed.contains(&p.id);
        ws.add_pair(p, a, None, is_seed)?;
    }
    run.save(&ws)?;
    jsonl::append(&run.rd.report_path("rejections.jsonl"), &rejections)?;

    let mut by_reason: BTreeMap<String, u64> = BTreeMap::new();
    for r in &rejections {
        *by_reason.entry(format!("rejected_{}", r.reason.code())).or_default() += 1;
    }
    let mut n = notes([("read", n_read), ("accepted", n_new), ("seed", seed.len())]);
    n.extend(by_reason);
    run.manifest(Stage::Ingest, 0, before, ws.ledger.counts(), n)?;
    println!(
        "ingested {n_new} of {n_read} records ({} seed, {} rejected); store holds {} pairs",
        seed.len(),
        rejections.len(),
        ws.store.len()
    );
    Ok(())
}

pub fn decontaminate(g: &GlobalArgs, cfg: RunConfig, a: &DecontaminateArgs) -> Result<(), CliError> {
    require_file(&a.benchmarks, "benchmark directory")?;
    if g.dry_run {
        print_plan(
            "decontaminate",
            &g.run_dir,
            &[
                format!("index 13-grams of the prompts in {}", a.benchmarks.display()),
                "drop matching pairs from the store (only before any curation)".into(),
                "append removals to reports/rejections.jsonl".into(),
            ],
        );
        return Ok(());
    }
    let run = Run::open(g, cfg)?;
    let ws = run.load()?;
    let started = !ws.ledger.verdicts().is_empty()
        || !ws.recycled.is_empty()
        || ws.ledger.events().iter().any(|e| e.reason != Reason::Ingest);
    if started {
        return Err(CliError::user(
            "curation has already started in this run; decontaminate at ingest time instead",
        ));
    }
    let index = contamination_index(&a.benchmarks)?;
    let pairs: Vec<PreferencePair> = ws.store.pairs().cloned().collect();
    let (_, removed) = decontam(pairs, &index).map_err(|e| CliError::internal(e.to_string()))?;
    let gone: BTreeSet<&PairId> = removed.iter().map(|c| &c.pair.id).collect();

    // Rebuild in original admission order so the ledger stays as if the
    // removed pairs had never been ingested.
    let mut out = Workspace {
        embed_tag: ws.embed_tag.clone(),
        ..Workspace::new()
    };
    for e in ws.ledger.events() {
        if gone.contains(&e.pair_id) {
            continue;
        }
        let id = &e.pair_id;
        let pair = ws.store.get(id).cloned().ok_or_else(|| CliError::internal(format!("{id} missing")))?;
        out.add_pair(
            pair,
            ws.store.attrs(id).cloned(),
            ws.store.embeddings(id).cloned(),
            ws.seed_ids.contains(id),
        )?;
    }
    run.save(&out)?;
    let records: Vec<RejectionRecord> = removed
        .iter()
        .map(|c| RejectionRecord {
            key: c.pair.id.to_string(),
            reason: RejectReason::Contaminated,
            matched_window: Some(c.matched_window.clone()),
            detail: String::new(),
        })
        .collect();
    jsonl::append(&run.rd.report_path("rejections.jsonl"), &records)?;
    run.manifest(
        Stage::Decontaminate,
        0,
        ws.ledger.counts(),
        out.ledger.counts(),
        notes([("removed", removed.len())]),
    )?;
    println!("removed {} contaminated pairs; {} remain", removed.len(), out.store.len());
    Ok(())
}

const EMBED_CHUNK: usize = 4096;

pub fn embed(g: &GlobalArgs, cfg: RunConfig) -> Result<(), CliError> {
    if g.dry_run {
        print_plan(
            "embed",
            &g.run_dir,
            &[
                format!(
                    "embed context, chosen and rejected of pairs lacking vectors with {} (dim {})",
                    if cfg.embed_model.is_empty() { "the hashing embedder" } else { &cfg.embed_model },
                    cfg.embed_dim
                ),
                "write embeddings/*.bin".into(),
            ],
        );
        return Ok(());
    }
    let run = Run::open(g, cfg)?;
    let mut ws = run.load()?;
    let provider = run.embedder()?;
    let has_any = ws.store.all_embeddings().next().is_some();
    if let Some(tag) = &ws.embed_tag {
        if has_any && tag != provider.tag() {
            return Err(CliError::user(format!(
                "stored embeddings come from {tag}, the configured provider is {}",
                provider.tag()
            )));
        }
    }
    let missing: Vec<PairId> = ws
        .store
        .pairs()
        .filter(|p| ws.store.embeddings(&p.id).is_none())
        .map(|p| p.id.clone())
        .collect();
    for (i, chunk) in missing.chunks(EMBED_CHUNK).enumerate() {
        let batch: Vec<(&PreferencePair, Option<&AttributeSet>)> = chunk
            .iter()
            .map(|id| (ws.store.get(id).expect("listed from the store"), ws.store.attrs(id)))
            .collect();
        let vecs = embed_pairs(&batch, provider.as_ref()).map_err(|e| CliError::internal(e.to_string()))?;
        for (id, e) in chunk.iter().zip(vecs) {
            ws.store.set_embeddings(id.clone(), e);
        }
        log::info!("embedded {} / {}", (i * EMBED_CHUNK + chunk.len()), missing.len());
    }
    ws.embed_tag = Some(provider.tag().to_string());
    run.save(&ws)?;
    let counts = ws.ledger.counts();
    run.manifest(Stage::Embed, 0, counts.clone(), counts, notes([("embedded", missing.len())]))?;
    println!("embedded {} pairs with {}", missing.len(), provider.tag());
    Ok(())
}

fn train_config(cfg: &RunConfig, key: &str) -> TrainConfig {
    TrainConfig {
        rng_seed: derive_seed(cfg.seed, key),
        ..cfg.curate().train
    }
}

/// `--epochs` and `--include-recycled` shape only this checkpoint, so they
/// are applied after the config digest check rather than to the run config.
pub fn train(g: &GlobalArgs, cfg: RunConfig, a: &TrainArgs) -> Result<(), CliError> {
    let name = a.name.as_str();
    let include_recycled = cfg.include_recycled || a.include_recycled;
    let epochs = a.epochs.unwrap_or(cfg.epochs);
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(CliError::user("checkpoint name must be a plain file name"));
    }
    if g.dry_run {
        print_plan(
            "train",
            &g.run_dir,
            &[
                format!(
                    "train a {:?} head on silver + retained{} for {} epochs",
                    cfg.arch(),
                    if include_recycled { " + recycled" } else { "" },
                    epochs
                ),
                "select the checkpoint with the best gold accuracy".into(),
                format!("write checkpoints/{name}.ckpt and reports/train-{name}.jsonl"),
            ],
        );
        return Ok(());
    }
    let run = Run::open(g, cfg)?;
    let ws = run.load()?;
    let train_ids = ws.training_ids(include_recycled);
    let gold_ids = ws.ledger.snapshot(Pool::Gold);
    if train_ids.is_empty() {
        return Err(CliError::user("no training pairs yet (silver and retained are empty)"));
    }
    if gold_ids.is_empty() {
        return Err(CliError::user("gold pool is empty; checkpoint selection needs human-verified pairs"));
    }
    let tcfg = TrainConfig {
        epochs,
        ..train_config(&run.cfg, &format!("train/{name}"))
    };
    let report = fit(&ws.embedded(&train_ids)?, &ws.embedded(&gold_ids)?, &tcfg)?;
    write_checkpoint(&run.rd.checkpoint_path(name), &report.model, report.best_gold_accuracy)?;
    jsonl::write(&run.rd.report_path(&format!("train-{name}.jsonl")), &report.history)?;
    let counts = ws.ledger.counts();
    run.manifest(
        Stage::Train,
        0,
        counts.clone(),
        counts,
        notes([
            ("train_pairs", train_ids.len()),
            ("gold_pairs", gold_ids.len()),
            ("best_step", report.best_step),
            ("epochs", epochs),
            ("include_recycled", include_recycled as usize),
        ]),
    )?;
    println!(
        "trained on {} pairs; best gold accuracy {:.4} at step {}",
        train_ids.len(),
        report.best_gold_accuracy,
        report.best_step
    );
    Ok(())
}

/// Collects human-routed pairs for the annotation service.
#[derive(Default)]
struct QueueChannel {
    routed: Vec<PairId>,
}

impl HumanChannel for QueueChannel {
    fn route(&mut self, pairs: &[PairId], _: &PairStore) -> Vec<Verdict> {
        self.routed.extend(pairs.iter().cloned());
        Vec::new()
    }
}

enum Humans {
    Stub(StubHuman),
    Queue(QueueChannel),
}

impl Humans {
    fn channel(&mut self) -> &mut dyn HumanChannel {
        match self {
            Humans::Stub(h) => h,
            Humans::Queue(q) => q,
        }
    }
}

/// Writes whatever the queue channel collected since the last flush.
fn flush_human_queue(run: &Run, humans: &mut Humans, iteration: u32) -> Result<(), CliError> {
    let Humans::Queue(q) = humans else { return Ok(()) };
    if q.routed.is_empty() {
        return Ok(());
    }
    let ids = std::mem::take(&mut q.routed);
    let n = append_human_queue(run, &ids, iteration)?;
    println!("{n} pairs queued for human verification");
    Ok(())
}

fn append_human_queue(run: &Run, ids: &[PairId], iteration: u32) -> Result<usize, CliError> {
    let path = run.rd.queue_path(HUMAN_QUEUE);
    let existing: BTreeSet<PairId> = if path.exists() {
        jsonl::read::<HumanTask>(&path)?.into_iter().map(|t| t.pair_id).collect()
    } else {
        BTreeSet::new()
    };
    let new: Vec<HumanTask> = ids
        .iter()
        .filter(|id| !existing.contains(*id))
        .map(|id| HumanTask {
            pair_id: id.clone(),
            iteration,
        })
        .collect();
    jsonl::append(&path, &new)?;
    Ok(new.len())
}

fn append_votes(run: &Run, votes: &[VoteRecord]) -> Result<(), CliError> {
    Ok(jsonl::append(&run.rd.votes_path(), votes)?)
}

fn validation_pairs(cfg: &RunConfig) -> Result<Option<Vec<EmbeddedPair>>, CliError> {
    if cfg.validation_set.is_empty() {
        return Ok(None);
    }
    let path = Path::new(&cfg.validation_set);
    require_file(path, "validation set")?;
    let file = load_eval_set(path).map_err(|e| CliError::user(e.to_string()))?;
    let provider = crate::context::embedder(cfg)?;
    let (pairs, _) = embed_eval_set(&file, provider.as_ref()).map_err(|e| CliError::internal(e.to_string()))?;
    Ok(Some(pairs.into_iter().map(|p| EmbeddedPair::new(p.chosen, p.rejected)).collect()))
}

pub fn stage1(g: &GlobalArgs, cfg: RunConfig) -> Result<(), CliError> {
    if g.dry_run {
        let rd = prefcurate::rundir::RunDir::new(&g.run_dir);
        let done = prefcurate::rundir::read_json::<Stage1State>(&rd.state_path(STAGE1_STATE))
            .map(|s| s.iteration)
            .unwrap_or(0);
        let mut steps = Vec::new();
        if !rd.state_path(SEED_STATE).exists() {
            steps.push(format!(
                "verify the seed pool: {:.0}% to humans, the rest to judges",
                cfg.seed_human_fraction * 100.0
            ));
        }
        if done >= cfg.iterations {
            steps.push(format!("nothing to do: {done} iterations already complete"));
        } else {
            steps.push(format!(
                "run iterations {}..={} (train, retrieve with k_max {}, route {:.0}% to humans)",
                done + 1,
                cfg.iterations,
                cfg.k_max,
                cfg.human_ratio * 100.0
            ));
        }
        steps.push(format!(
            "judges: {}; humans: {}",
            if cfg.stub_judges { "stub" } else { "configured HTTP models" },
            if cfg.stub_judges && !cfg.queue_humans {
                "stub (trust stored labels)"
            } else {
                "queued to queues/human.jsonl"
            }
        ));
        print_plan("stage1", &g.run_dir, &steps);
        return Ok(());
    }
    let run = Run::open(g, cfg)?;
    let mut ws = run.load()?;
    let judges = run.judges()?;
    let ccfg = run.cfg.curate();
    let mut humans = if run.cfg.stub_judges && !run.cfg.queue_humans {
        Humans::Stub(StubHuman::new(std::sync::Arc::new(TrustLabels), derive_seed(run.cfg.seed, "stub-human")))
    } else {
        Humans::Queue(QueueChannel::default())
    };

    if run.read_state::<SeedReport>(SEED_STATE)?.is_none() {
        let before = ws.ledger.counts();
        let (report, votes) = initialize_seed(&mut ws, &ccfg, humans.channel(), &judges)?;
        append_votes(&run, &votes)?;
        run.save(&ws)?;
        run.write_state(SEED_STATE, &report)?;
        flush_human_queue(&run, &mut humans, 0)?;
        run.manifest(
            Stage::Stage1,
            0,
            before,
            ws.ledger.counts(),
            notes([("seed_pairs", report.seed_pairs), ("deferred", report.deferred)]),
        )?;
        println!(
            "seed pool: {} pairs, {} to gold, {} judged",
            report.seed_pairs,
            report.human.confirmed + report.human.swapped,
            report.judged.chosen_stands + report.judged.swapped + report.judged.abstained
        );
    }
    let validation = validation_pairs(&run.cfg)?;
    let mut state: Stage1State = run.read_state(STAGE1_STATE)?.unwrap_or_default();
    if state.iteration >= run.cfg.iterations {
        println!("stage 1 already at iteration {}", state.iteration);
    }
    while state.iteration < run.cfg.iterations {
        let before = ws.ledger.counts();
        let out = stage1_iteration(&mut ws, &mut state, &ccfg, humans.channel(), &judges, validation.as_deref())?;
        let it = out.report.iteration;
        let model: &RewardModel = state.best_model.as_ref().expect("set by the iteration");
        write_checkpoint(&run.rd.checkpoint_path(&format!("stage1-iter{it:02}")), model, state.best_gold_accuracy)?;
        write_checkpoint(&run.rd.checkpoint_path(BEST), model, state.best_gold_accuracy)?;
        jsonl::write(&run.rd.queue_path(&format!("stage1-iter{it:02}")), &out.queue)?;
        jsonl::write(&run.rd.report_path(&format!("train-stage1-iter{it:02}.jsonl")), &out.train.history)?;
        append_votes(&run, &out.votes)?;
        run.save(&ws)?;
        run.write_state(STAGE1_STATE, &state)?;
        flush_human_queue(&run, &mut humans, it)?;
        run.write_report(&format!("stage1-iter{it:02}.json"), &out.report)?;
        run.manifest(
            Stage::Stage1,
            it,
            before,
            ws.ledger.counts(),
            notes([
                ("queue", out.report.queue_len),
                ("human_routed", out.report.human_routed),
                ("judge_routed", out.report.judge_routed),
                ("deferred", out.report.deferred),
                ("no_new_data", out.report.no_new_data as usize),
            ]),
        )?;
        println!(
            "iteration {it}: gold accuracy {:.4}, queue {}, {} to humans, {} to judges{}",
            out.report.best_gold_accuracy,
            out.report.queue_len,
            out.report.human_routed,
            out.report.judge_routed,
            if out.report.no_new_data { " (no new data)" } else { "" }
        );
    }
    Ok(())
}

pub fn stage2(g: &GlobalArgs, cfg: RunConfig, with_judges: bool) -> Result<(), CliError> {
    if g.dry_run {
        print_plan(
            "stage2",
            &g.run_dir,
            &[
                "load checkpoints/best.ckpt and train a gold model on human-verified pairs".into(),
                "confidence filter at p > 0.5 over the unverified pool".into(),
                if with_judges {
                    "judge-label the low-confidence side".into()
                } else {
                    "no judges: consistency uses the best-model arm only".into()
                },
                "retain consistent pairs, discard the rest; write checkpoints/gold.ckpt".into(),
            ],
        );
        return Ok(());
    }
    let run = Run::open(g, cfg)?;
    let mut ws = run.load()?;
    let best_path = run.rd.checkpoint_path(BEST);
    if !best_path.exists() {
        return Err(CliError::user("no best checkpoint; run `prefcurate stage1` first"));
    }
    let (best, _) = read_checkpoint(&best_path)?;
    if ws.ledger.snapshot(Pool::Unverified).is_empty() {
        println!("unverified pool is empty; nothing to do");
        return Ok(());
    }
    let judges = if with_judges { Some(run.judges()?) } else { None };
    let iteration = run.read_state::<Stage1State>(STAGE1_STATE)?.map(|s| s.iteration).unwrap_or(0) + 1;
    let before = ws.ledger.counts();
    let out = run_stage2(&mut ws, &best, &run.cfg.curate(), judges.as_deref(), iteration)?;
    write_checkpoint(&run.rd.checkpoint_path(GOLD), &out.gold_model.model, out.gold_model.eval_accuracy)?;
    append_votes(&run, &out.votes)?;
    run.save(&ws)?;
    run.write_report("stage2.json", &out.report)?;
    let r = &out.report;
    run.manifest(
        Stage::Stage2,
        iteration,
        before,
        ws.ledger.counts(),
        notes([
            ("input", r.input),
            ("confidence_pass", r.confidence_pass),
            ("reannotation", r.reannotation),
            ("retained_confidence", r.retained_confidence),
            ("retained_consistency", r.retained_consistency),
            ("consistency_fail", r.consistency_fail),
            ("deferred", r.deferred),
            ("used_judges", r.used_judges as usize),
        ]),
    )?;
    println!(
        "stage 2 over {} pairs: {} retained, {} to silver by judge swap, {} discarded, {} deferred",
        r.input,
        r.retained_confidence + r.retained_consistency,
        r.judge_swapped,
        r.consistency_fail + r.judge_abstained,
        r.deferred
    );
    Ok(())
}

pub fn recycle(g: &GlobalArgs, cfg: RunConfig) -> Result<(), CliError> {
    if g.dry_run {
        print_plan(
            "recycle",
            &g.run_dir,
            &[
                "flip every discarded pair, dropping flips that collide with existing pairs".into(),
                "write pairs/recycled.jsonl".into(),
            ],
        );
        return Ok(());
    }
    let run = Run::open(g, cfg)?;
    let mut ws = run.load()?;
    let before = ws.ledger.counts();
    let report = recycle_discarded(&mut ws);
    run.save(&ws)?;
    run.write_report("recycle.json", &report)?;
    run.manifest(
        Stage::Recycle,
        0,
        before,
        ws.ledger.counts(),
        notes([
            ("discarded", report.discarded),
            ("created", report.created.len()),
            ("duplicates", report.duplicates),
        ]),
    )?;
    println!(
        "recycled {} of {} discarded pairs ({} duplicates); shard holds {}",
        report.created.len(),
        report.discarded,
        report.duplicates,
        ws.recycled.len()
    );
    Ok(())
}
