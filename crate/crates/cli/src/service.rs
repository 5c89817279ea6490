use std::sync::Arc;

use prefcurate::jsonl;
use prefcurate::judge::{preverify_batch, HttpVerifier, ENV_JUDGE_KEY, ENV_JUDGE_URL};
use prefcurate::ledger::Pool;
use prefcurate::pair::PairId;
use prefcurate_serve::{AppState, RunDirPersistence, SystemClock, TaskQueue, ENV_TOKEN};

use crate::config::RunConfig;
use crate::context::{print_plan, Run};
use crate::error::CliError;
use crate::pipeline::{HumanTask, HUMAN_QUEUE};
use crate::GlobalArgs;

pub fn serve(g: &GlobalArgs, cfg: RunConfig) -> Result<(), CliError> {
    if g.dry_run {
        print_plan(
            "serve",
            &g.run_dir,
            &[
                "load queues/human.jsonl and enqueue pairs still awaiting a human verdict".into(),
                if cfg.preverify_model.is_empty() {
                    "no pre-verification".into()
                } else {
                    format!("pre-verify objective pairs with {}", cfg.preverify_model)
                },
                format!("listen on {} until interrupted", cfg.bind),
                "append verdicts, pool events and ledgers/audit.jsonl as they arrive".into(),
            ],
        );
        return Ok(());
    }
    // The lock is held for as long as the server runs.
    let run = Run::open(g, cfg)?;
    let ws = run.load()?;
    let path = run.rd.queue_path(HUMAN_QUEUE);
    let tasks: Vec<HumanTask> = if path.exists() { jsonl::read(&path)? } else { Vec::new() };
    let eligible: Vec<PairId> = tasks
        .into_iter()
        .map(|t| t.pair_id)
        .filter(|id| {
            let ok = ws.ledger.pool_of(id) == Some(Pool::Unverified) && ws.ledger.human_verdict(id).is_none();
            if ok && ws.store.attrs(id).is_none() {
                log::warn!("{id} has no attributes; not served");
                return false;
            }
            ok
        })
        .collect();

    let hints = if run.cfg.preverify_model.is_empty() {
        None
    } else {
        let endpoint = std::env::var(ENV_JUDGE_URL)
            .map_err(|_| CliError::user(format!("preverify_model is set but {ENV_JUDGE_URL} is not")))?;
        let verifier = HttpVerifier::new(endpoint, run.cfg.preverify_model.clone(), std::env::var(ENV_JUDGE_KEY).ok());
        let input: Vec<_> = eligible
            .iter()
            .filter_map(|id| Some((ws.store.get(id)?.clone(), ws.store.attrs(id)?.clone())))
            .collect();
        let out = preverify_batch(&input, &verifier, run.cfg.max_in_flight);
        if !out.failed.is_empty() {
            log::warn!("pre-verification failed for {} pairs; they are served without hints", out.failed.len());
        }
        Some(out.hints)
    };

    let persist = Arc::new(RunDirPersistence::new(run.rd.clone()));
    let mut queue = TaskQueue::new(ws, run.cfg.queue(), Arc::new(SystemClock), persist);
    let n = queue.enqueue(&eligible).map_err(|e| CliError::internal(e.to_string()))?;
    if let Some(h) = hints {
        queue.attach_hints(h.into_values());
    }
    let token = AppState::token_from_env();
    if token.is_none() {
        log::warn!("{ENV_TOKEN} is not set; the API accepts unauthenticated requests");
    }
    let state = AppState::new(queue, token);

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::internal(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&run.cfg.bind)
            .await
            .map_err(|e| CliError::user(format!("cannot bind {}: {e}", run.cfg.bind)))?;
        let addr = listener.local_addr().map_err(|e| CliError::internal(e.to_string()))?;
        println!("serving {n} tasks on http://{addr}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        prefcurate_serve::serve(listener, state, shutdown)
            .await
            .map_err(|e| CliError::internal(e.to_string()))
    })
}
