use prefcurate::curate::Workspace;
use prefcurate::jsonl;
use prefcurate::ledger::Outcome;
use prefcurate::rundir::RunDir;

use crate::queue::{AuditRecord, Persistence};

/// Writes accepted verdicts into a run directory.
///
/// Verdicts, pool events and the audit trail are appended. A swap also
/// changes stored orientation, so it triggers a full workspace save.
pub struct RunDirPersistence {
    dir: RunDir,
}

impl RunDirPersistence {
    pub fn new(dir: RunDir) -> Self {
        RunDirPersistence { dir }
    }

    pub fn audit_path(&self) -> std::path::PathBuf {
        self.dir.path("ledgers/audit.jsonl")
    }
}

impl Persistence for RunDirPersistence {
    fn verdict_applied(&self, ws: &Workspace, audit: &AuditRecord) -> Result<(), String> {
        let err = |e: &dyn std::fmt::Display| e.to_string();
        if audit.outcome == Outcome::Swap {
            self.dir.save_workspace(ws).map_err(|e| err(&e))?;
        } else {
            let verdict = ws.ledger.verdicts().last().ok_or("ledger has no verdicts")?;
            let event = ws.ledger.events().last().ok_or("ledger has no events")?;
            jsonl::append(&self.dir.verdicts_path(), std::slice::from_ref(verdict)).map_err(|e| err(&e))?;
            jsonl::append(&self.dir.pools_path(), std::slice::from_ref(event)).map_err(|e| err(&e))?;
        }
        jsonl::append(&self.audit_path(), std::slice::from_ref(audit)).map_err(|e| err(&e))
    }
}
