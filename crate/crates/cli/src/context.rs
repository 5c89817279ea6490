use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use prefcurate::curate::Workspace;
use prefcurate::embed::{EmbeddingProvider, HashingEmbedder, RemoteEmbedder};
use prefcurate::hash::derive_seed;
use prefcurate::judge::{HttpJudge, JudgeProvider, StubJudge, TrustLabels, ENV_JUDGE_URL};
use prefcurate::ledger::Pool;
use prefcurate::manifest::{RunManifest, Stage};
use prefcurate::rundir::{read_json, write_json, RunDir, RunLock};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{differing_keys, RunConfig, StoredConfig};
use crate::error::CliError;
use crate::GlobalArgs;

const CONFIG_FILE: &str = "manifests/config.json";

/// An opened run directory together with the effective config.
pub struct Run {
    pub rd: RunDir,
    pub cfg: RunConfig,
    _lock: Option<RunLock>,
}

impl Run {
    /// Locks the directory for writing and checks (or records) the config
    /// digest.
    pub fn open(g: &GlobalArgs, cfg: RunConfig) -> Result<Run, CliError> {
        cfg.validate()?;
        let rd = RunDir::new(&g.run_dir);
        let lock = rd.lock()?;
        check_digest(&rd, &cfg)?;
        rd.create_layout()?;
        let path = rd.path(CONFIG_FILE);
        if !path.exists() {
            write_json(
                &path,
                &StoredConfig {
                    digest: cfg.digest(),
                    config: cfg.pipeline_view(),
                },
            )?;
        }
        Ok(Run {
            rd,
            cfg,
            _lock: Some(lock),
        })
    }

    /// Opens an existing run without locking; the digest is still checked.
    pub fn open_read(g: &GlobalArgs, cfg: RunConfig) -> Result<Run, CliError> {
        cfg.validate()?;
        let rd = RunDir::new(&g.run_dir);
        require_initialized(&rd)?;
        check_digest(&rd, &cfg)?;
        Ok(Run { rd, cfg, _lock: None })
    }

    pub fn load(&self) -> Result<Workspace, CliError> {
        require_initialized(&self.rd)?;
        Ok(self.rd.load_workspace()?)
    }

    pub fn save(&self, ws: &Workspace) -> Result<(), CliError> {
        Ok(self.rd.save_workspace(ws)?)
    }

    /// Writes `manifests/{stage}-{iteration}.json`, or the next free
    /// `-{n}` suffix for stages that can run many times at one iteration.
    pub fn manifest(
        &self,
        stage: Stage,
        iteration: u32,
        before: BTreeMap<Pool, usize>,
        after: BTreeMap<Pool, usize>,
        notes: BTreeMap<String, u64>,
    ) -> Result<(), CliError> {
        let stage_name = serde_json::to_value(stage)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let mut run_id = format!("{stage_name}-{iteration:04}");
        let mut n = 1;
        while self.rd.manifest_path(&run_id).exists() {
            n += 1;
            run_id = format!("{stage_name}-{iteration:04}-{n}");
        }
        let m = RunManifest {
            run_id: run_id.clone(),
            stage,
            iteration,
            rng_seed: self.cfg.seed,
            config_digest: self.cfg.digest(),
            counts_before: before,
            counts_after: after,
            notes,
        };
        write_json(&self.rd.manifest_path(&run_id), &m)?;
        Ok(())
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>, CliError> {
        embedder(&self.cfg)
    }

    pub fn judges(&self) -> Result<Vec<Arc<dyn JudgeProvider>>, CliError> {
        let cfg = &self.cfg;
        if cfg.stub_judges {
            return Ok((0..cfg.stub_judge_count)
                .map(|i| {
                    let id = format!("stub-{i}");
                    let seed = derive_seed(cfg.seed, &format!("stub-judge/{i}"));
                    Arc::new(StubJudge::new(id, cfg.stub_judge_accuracy, seed, Arc::new(TrustLabels)))
                        as Arc<dyn JudgeProvider>
                })
                .collect());
        }
        if cfg.judge_models.is_empty() {
            return Err(CliError::user(
                "no judges configured: set judge_models in the config or pass --stub-judges",
            ));
        }
        cfg.judge_models
            .iter()
            .map(|m| {
                HttpJudge::from_env(m.clone())
                    .map(|j| Arc::new(j) as Arc<dyn JudgeProvider>)
                    .ok_or_else(|| CliError::user(format!("judge model {m} needs {ENV_JUDGE_URL}")))
            })
            .collect()
    }

    pub fn read_state<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>, CliError> {
        let p = self.rd.state_path(name);
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(read_json(&p)?))
    }

    pub fn write_state<T: Serialize>(&self, name: &str, v: &T) -> Result<(), CliError> {
        Ok(write_json(&self.rd.state_path(name), v)?)
    }

    pub fn write_report<T: Serialize>(&self, name: &str, v: &T) -> Result<(), CliError> {
        Ok(write_json(&self.rd.report_path(name), v)?)
    }
}

pub fn embedder(cfg: &RunConfig) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    if cfg.embed_model.is_empty() {
        return Ok(Box::new(HashingEmbedder::new(cfg.embed_dim)));
    }
    RemoteEmbedder::from_env(cfg.embed_model.clone(), cfg.embed_dim)
        .map(|e| Box::new(e.with_batching(64, cfg.max_in_flight)) as Box<dyn EmbeddingProvider>)
        .ok_or_else(|| CliError::user("embed_model is set but PREFCURATE_EMBED_URL is not"))
}

fn require_initialized(rd: &RunDir) -> Result<(), CliError> {
    if rd.is_initialized() {
        Ok(())
    } else {
        Err(CliError::user(format!(
            "{} holds no pair store; run `prefcurate ingest` first",
            rd.root().display()
        )))
    }
}

fn check_digest(rd: &RunDir, cfg: &RunConfig) -> Result<(), CliError> {
    let path = rd.path(CONFIG_FILE);
    if !path.exists() {
        return Ok(());
    }
    let stored: StoredConfig = read_json(&path)?;
    let digest = cfg.digest();
    if stored.digest == digest {
        return Ok(());
    }
    let keys = differing_keys(&stored.config, &cfg.pipeline_view());
    Err(CliError::user(format!(
        "config digest mismatch: {} was created with {}, current config gives {} (differing keys: {})",
        rd.root().display(),
        &stored.digest[..12],
        &digest[..12],
        keys.join(", ")
    )))
}

/// Prints a dry-run plan.
pub fn print_plan(cmd: &str, run_dir: &Path, steps: &[String]) {
    println!("dry run: {cmd} on {}", run_dir.display());
    for s in steps {
        println!("  - {s}");
    }
}
