//! On-disk run directory.
//!
//! ```text
//! pairs/pairs.jsonl        pair store (current orientation)
//! pairs/recycled.jsonl     recycled shard
//! pairs/seed_ids.json      ids of the seed pool
//! attrs/attrs.jsonl        attribute sets keyed by pair_id
//! ledgers/pools.jsonl      pool ledger events
//! ledgers/verdicts.jsonl   human and judge verdicts
//! ledgers/votes.jsonl      per-model judge votes
//! embeddings/{context,chosen,rejected}.bin
//! checkpoints/  manifests/  queues/  reports/
//! ```
//!
//! Every file is rewritten whole through a temp file and a rename, so an
//! interrupted save leaves the previous version intact.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::curate::Workspace;
use crate::embed::{read_cache, write_cache, CacheError, EmbeddingCache};
use crate::embed::PairEmbeddings;
use crate::jsonl::{self, JsonlError};
use crate::ledger::{Ledger, LedgerError, LedgerRecord, Verdict};
use crate::pair::{AttributeSet, PairId, PreferencePair};

#[derive(Debug, thiserror::Error)]
pub enum RunDirError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("embedding cache {path}: {source}")]
    Cache { path: String, source: CacheError },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("run directory {0} is locked by another process (remove the lock file if it is stale)")]
    Locked(String),
    #[error("embedding files disagree: {0}")]
    Embeddings(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunDirError + '_ {
    move |source| RunDirError::Io {
        path: path.display().to_string(),
        source,
    }
}

const SUBDIRS: [&str; 9] = [
    "pairs",
    "attrs",
    "ledgers",
    "embeddings",
    "checkpoints",
    "manifests",
    "queues",
    "reports",
    "state",
];

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

/// Held while a process owns the run directory.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create_layout(&self) -> Result<(), RunDirError> {
        for d in SUBDIRS {
            let p = self.root.join(d);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(())
    }

    /// True once a pair store has been written.
    pub fn is_initialized(&self) -> bool {
        self.pairs_path().exists()
    }

    pub fn lock(&self) -> Result<RunLock, RunDirError> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let path = self.root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                Err(RunDirError::Locked(self.root.display().to_string()))
            }
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn pairs_path(&self) -> PathBuf {
        self.path("pairs/pairs.jsonl")
    }

    pub fn recycled_path(&self) -> PathBuf {
        self.path("pairs/recycled.jsonl")
    }

    pub fn pools_path(&self) -> PathBuf {
        self.path("ledgers/pools.jsonl")
    }

    pub fn verdicts_path(&self) -> PathBuf {
        self.path("ledgers/verdicts.jsonl")
    }

    pub fn votes_path(&self) -> PathBuf {
        self.path("ledgers/votes.jsonl")
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.path(&format!("checkpoints/{name}.ckpt"))
    }

    pub fn manifest_path(&self, name: &str) -> PathBuf {
        self.path(&format!("manifests/{name}.json"))
    }

    pub fn queue_path(&self, name: &str) -> PathBuf {
        self.path(&format!("queues/{name}.jsonl"))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.path(&format!("reports/{name}"))
    }

    pub fn state_path(&self, name: &str) -> PathBuf {
        self.path(&format!("state/{name}.json"))
    }

    fn embedding_path(&self, part: &str) -> PathBuf {
        self.path(&format!("embeddings/{part}.bin"))
    }

    pub fn save_workspace(&self, ws: &Workspace) -> Result<(), RunDirError> {
        self.create_layout()?;
        let (recycled, main): (Vec<&PreferencePair>, Vec<&PreferencePair>) =
            ws.store.pairs().partition(|p| ws.recycled.contains(&p.id));
        jsonl::write(&self.pairs_path(), &main)?;
        jsonl::write(&self.recycled_path(), &recycled)?;
        let attrs: Vec<&AttributeSet> = ws.store.all_attrs().collect();
        jsonl::write(&self.path("attrs/attrs.jsonl"), &attrs)?;
        write_json(&self.path("pairs/seed_ids.json"), &ws.seed_ids)?;
        jsonl::write(&self.pools_path(), ws.ledger.events())?;
        jsonl::write(&self.verdicts_path(), ws.ledger.verdicts())?;

        let mut parts: Vec<(&str, EmbeddingCache)> = Vec::new();
        if let Some((_, first)) = ws.store.all_embeddings().next() {
            let tag = ws.embed_tag.clone().unwrap_or_default();
            let dim = first.context.dim();
            for part in ["context", "chosen", "rejected"] {
                parts.push((part, EmbeddingCache::new(dim, tag.clone())));
            }
            for (id, e) in ws.store.all_embeddings() {
                parts[0].1.vectors.insert(id.clone(), e.context.clone());
                parts[1].1.vectors.insert(id.clone(), e.chosen.clone());
                parts[2].1.vectors.insert(id.clone(), e.rejected.clone());
            }
        }
        for (part, cache) in parts {
            let path = self.embedding_path(part);
            let tmp = path.with_extension("bin.tmp");
            write_cache(&tmp, &cache).map_err(|source| RunDirError::Cache {
                path: tmp.display().to_string(),
                source,
            })?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn load_workspace(&self) -> Result<Workspace, RunDirError> {
        let mut ws = Workspace::new();
        let main: Vec<PreferencePair> = jsonl::read(&self.pairs_path())?;
        let recycled: Vec<PreferencePair> = jsonl::read(&self.recycled_path())?;
        for p in main {
            ws.store.insert(p);
        }
        for p in recycled {
            ws.recycled.insert(p.id.clone());
            ws.store.insert(p);
        }
        for a in jsonl::read::<AttributeSet>(&self.path("attrs/attrs.jsonl"))? {
            ws.store.set_attrs(a);
        }
        let seed_path = self.path("pairs/seed_ids.json");
        if seed_path.exists() {
            ws.seed_ids = read_json::<BTreeSet<PairId>>(&seed_path)?;
        }
        let events: Vec<LedgerRecord> = jsonl::read(&self.pools_path())?;
        let verdicts: Vec<Verdict> = jsonl::read(&self.verdicts_path())?;
        ws.ledger = Ledger::replay(verdicts, events)?;

        if self.embedding_path("context").exists() {
            let load = |part: &str| {
                let path = self.embedding_path(part);
                read_cache(&path).map_err(|source| RunDirError::Cache {
                    path: path.display().to_string(),
                    source,
                })
            };
            let (ctx, ch, rj) = (load("context")?, load("chosen")?, load("rejected")?);
            if ctx.vectors.len() != ch.vectors.len() || ch.vectors.len() != rj.vectors.len() {
                return Err(RunDirError::Embeddings("entry counts differ".into()));
            }
            ws.embed_tag = Some(ctx.provider_tag.clone());
            let mut ch = ch.vectors;
            let mut rj = rj.vectors;
            for (id, context) in ctx.vectors {
                let (Some(chosen), Some(rejected)) = (ch.remove(&id), rj.remove(&id)) else {
                    return Err(RunDirError::Embeddings(format!("{id} missing a response vector")));
                };
                ws.store.set_embeddings(
                    id,
                    PairEmbeddings {
                        context,
                        chosen,
                        rejected,
                    },
                );
            }
        }
        Ok(ws)
    }
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), RunDirError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| RunDirError::Json {
        path: path.display().to_string(),
        source,
    })?;
    bytes.push(b'\n');
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RunDirError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| RunDirError::Json {
        path: path.display().to_string(),
        source,
    })
}
