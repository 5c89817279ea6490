use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use prefcurate::btrm::read_checkpoint;
use prefcurate::curate::{Stage1State, Stage2Report};
use prefcurate::eval::{embed_eval_set, evaluate, load_eval_set};
use prefcurate::jsonl;
use prefcurate::ledger::{Pool, VerdictSource};
use prefcurate::rundir::read_json;
use serde::Serialize;

use crate::config::RunConfig;
use crate::context::{print_plan, Run};
use crate::error::CliError;
use crate::pipeline::{HumanTask, HUMAN_QUEUE, STAGE1_STATE};
use crate::{EvalArgs, GlobalArgs};

pub fn eval(g: &GlobalArgs, cfg: RunConfig, a: &EvalArgs) -> Result<(), CliError> {
    if !a.set.exists() {
        return Err(CliError::user(format!("eval set {} does not exist", a.set.display())));
    }
    let direct = PathBuf::from(&a.model);
    let model_path = if direct.is_file() {
        direct
    } else {
        prefcurate::rundir::RunDir::new(&g.run_dir).checkpoint_path(&a.model)
    };
    if !model_path.is_file() {
        return Err(CliError::user(format!("no checkpoint at {} or {}", a.model, model_path.display())));
    }
    let stem = a.set.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if g.dry_run {
        let mut steps = vec![
            format!("score {} with {}", a.set.display(), model_path.display()),
            format!("write reports/eval-{stem}.json"),
        ];
        if a.emit_curves {
            steps.push(format!("write reports/curve-{stem}.tsv over n in {:?}", cfg.bon_grid));
        }
        print_plan("eval", &g.run_dir, &steps);
        return Ok(());
    }
    let run = Run::open(g, cfg)?;
    let (model, _) = read_checkpoint(&model_path)?;
    let file = load_eval_set(&a.set).map_err(|e| CliError::user(e.to_string()))?;
    let provider = run.embedder()?;
    if provider.dim() != model.input_dim {
        return Err(CliError::user(format!(
            "checkpoint expects dim {}, the configured embedder gives {}",
            model.input_dim,
            provider.dim()
        )));
    }
    let (pairs, groups) = embed_eval_set(&file, provider.as_ref()).map_err(|e| CliError::internal(e.to_string()))?;
    let report = evaluate(&model, &file.name, &pairs, &groups, &run.cfg.bon_grid)
        .map_err(|e| CliError::user(e.to_string()))?;
    run.write_report(&format!("eval-{stem}.json"), &report)?;
    if a.emit_curves {
        let mut tsv = String::from("n\thit_rate\n");
        for p in &report.bon_curve {
            let _ = writeln!(tsv, "{}\t{:.6}", p.n, p.hit_rate);
        }
        let path = run.rd.report_path(&format!("curve-{stem}.tsv"));
        std::fs::write(&path, tsv).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
    }
    print!("{}", report.summary());
    Ok(())
}

#[derive(Debug, Default, Serialize)]
struct Summary {
    pools: BTreeMap<Pool, usize>,
    recycled: usize,
    human_verdicts: usize,
    judge_verdicts: usize,
    human_queue: usize,
    human_queue_open: usize,
    stage1_iteration: u32,
    best_gold_accuracy: f64,
    sanity_scores: Vec<(u32, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage2: Option<Stage2Report>,
}

pub fn report(g: &GlobalArgs, cfg: RunConfig) -> Result<(), CliError> {
    if g.dry_run {
        print_plan("report", &g.run_dir, &["read the run directory and print a summary".into()]);
        return Ok(());
    }
    let run = Run::open_read(g, cfg)?;
    let ws = run.load()?;
    let mut s = Summary {
        pools: ws.ledger.counts(),
        recycled: ws.recycled.len(),
        ..Summary::default()
    };
    for v in ws.ledger.verdicts() {
        match v.source {
            VerdictSource::Human { .. } => s.human_verdicts += 1,
            _ => s.judge_verdicts += 1,
        }
    }
    let q = run.rd.queue_path(HUMAN_QUEUE);
    if q.exists() {
        let tasks: Vec<HumanTask> = jsonl::read(&q)?;
        s.human_queue = tasks.len();
        s.human_queue_open = tasks
            .iter()
            .filter(|t| ws.ledger.pool_of(&t.pair_id) == Some(Pool::Unverified))
            .count();
    }
    if let Some(st) = run.read_state::<Stage1State>(STAGE1_STATE)? {
        s.stage1_iteration = st.iteration;
        s.best_gold_accuracy = st.best_gold_accuracy;
        s.sanity_scores = st.sanity_scores;
    }
    let p = run.rd.report_path("stage2.json");
    if p.exists() {
        s.stage2 = Some(read_json(&p)?);
    }

    println!("run {}", run.rd.root().display());
    for (pool, n) in &s.pools {
        println!("  {:<12} {n}", pool.as_str());
    }
    println!("  {:<12} {}", "recycled", s.recycled);
    println!("verdicts: {} human, {} judge", s.human_verdicts, s.judge_verdicts);
    println!("human queue: {} queued, {} still open", s.human_queue, s.human_queue_open);
    if s.stage1_iteration > 0 {
        println!(
            "stage 1: iteration {}, best gold accuracy {:.4}",
            s.stage1_iteration, s.best_gold_accuracy
        );
        for (it, v) in &s.sanity_scores {
            println!("  sanity after iteration {it}: {v:.4}");
        }
    }
    if let Some(r) = &s.stage2 {
        println!(
            "stage 2: {} in, {} confidence pass, {} consistency pass, {} consistency fail",
            r.input, r.retained_confidence, r.retained_consistency, r.consistency_fail
        );
    }
    println!(
        "{}",
        serde_json::to_string(&s).map_err(|e| CliError::internal(e.to_string()))?
    );
    Ok(())
}
