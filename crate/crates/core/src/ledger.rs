//! Append-only pool ledger.
//!
//! Every membership change is an event `{pair_id, pool, iteration, reason, ts}`.
//! Current membership is a derived view: the pool of the latest event for a
//! pair. Replaying the event log from empty reproduces it exactly.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pair::PairId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Unverified,
    Gold,
    Silver,
    Discarded,
    Retained,
}

impl Pool {
    pub const ALL: [Pool; 5] = [
        Pool::Unverified,
        Pool::Gold,
        Pool::Silver,
        Pool::Discarded,
        Pool::Retained,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pool::Unverified => "unverified",
            Pool::Gold => "gold",
            Pool::Silver => "silver",
            Pool::Discarded => "discarded",
            Pool::Retained => "retained",
        }
    }
}

impl fmt::Display for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Machine-readable reason attached to every ledger event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    Ingest,
    HumanConfirm,
    HumanSwap,
    HumanDiscard,
    JudgeLabel,
    JudgeSwap,
    JudgeAbstain,
    ConfidencePass,
    ConsistencyPass,
    ConsistencyFail,
    /// Explicit large-scale retention into gold; never produced implicitly.
    GoldRetention,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Ingest => "ingest",
            Reason::HumanConfirm => "human-confirm",
            Reason::HumanSwap => "human-swap",
            Reason::HumanDiscard => "human-discard",
            Reason::JudgeLabel => "judge-label",
            Reason::JudgeSwap => "judge-swap",
            Reason::JudgeAbstain => "judge-abstain",
            Reason::ConfidencePass => "confidence-pass",
            Reason::ConsistencyPass => "consistency-pass",
            Reason::ConsistencyFail => "consistency-fail",
            Reason::GoldRetention => "gold-retention",
        }
    }

    /// Pool a reason is allowed to move a pair into.
    fn target(self) -> Pool {
        match self {
            Reason::Ingest => Pool::Unverified,
            Reason::HumanConfirm | Reason::HumanSwap | Reason::GoldRetention => Pool::Gold,
            Reason::JudgeLabel | Reason::JudgeSwap => Pool::Silver,
            Reason::HumanDiscard | Reason::JudgeAbstain | Reason::ConsistencyFail => {
                Pool::Discarded
            }
            Reason::ConfidencePass | Reason::ConsistencyPass => Pool::Retained,
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of the pool ledger file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub pair_id: PairId,
    pub pool: Pool,
    pub iteration: u32,
    pub reason: Reason,
    /// Logical timestamp: position in the event sequence.
    pub ts: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VerdictSource {
    Human { annotator: String },
    Judge { model_id: String },
    Preverify { model_id: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Original orientation is correct.
    Confirm,
    /// Orientation must be flipped.
    Swap,
    /// Indeterminate or invalid.
    Discard,
}

/// One labeling decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pair_id: PairId,
    pub source: VerdictSource,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default)]
    pub ts: u64,
}

impl Verdict {
    pub fn human(pair_id: PairId, annotator: impl Into<String>, outcome: Outcome) -> Self {
        Verdict {
            pair_id,
            source: VerdictSource::Human {
                annotator: annotator.into(),
            },
            outcome,
            confidence: None,
            rationale: None,
            ts: 0,
        }
    }

    pub fn is_human(&self) -> bool {
        matches!(self.source, VerdictSource::Human { .. })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LedgerError {
    #[error("unknown pair {0}")]
    UnknownPair(PairId),
    #[error("pair {pair} is in {actual}, not {expected}")]
    WrongPool {
        pair: PairId,
        expected: Pool,
        actual: Pool,
    },
    #[error("pair {0} has no human verdict; cannot enter gold")]
    GoldWithoutVerdict(PairId),
    #[error("reason {reason} cannot move a pair into {pool}")]
    ReasonMismatch { reason: Reason, pool: Pool },
    #[error("pair {0} already has a human verdict")]
    DuplicateHumanVerdict(PairId),
    #[error("pair {0} is already tracked by the ledger")]
    AlreadyAdmitted(PairId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Applied {
    Appended,
    /// Same (pair, pool, iteration, reason) was already applied; nothing changed.
    Replayed,
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    events: Vec<LedgerRecord>,
    verdicts: Vec<Verdict>,
    membership: BTreeMap<PairId, Pool>,
    human: BTreeMap<PairId, usize>,
    applied: HashSet<(PairId, Pool, u32, Reason)>,
    next_ts: u64,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a ledger by replaying persisted verdicts and events.
    pub fn replay(verdicts: Vec<Verdict>, events: Vec<LedgerRecord>) -> Result<Self, LedgerError> {
        let mut ledger = Ledger::new();
        for v in verdicts {
            ledger.next_ts = ledger.next_ts.max(v.ts + 1);
            ledger.push_verdict(v)?;
        }
        for e in events {
            if e.reason.target() != e.pool {
                return Err(LedgerError::ReasonMismatch {
                    reason: e.reason,
                    pool: e.pool,
                });
            }
            ledger.check_gold(&e.pair_id, e.reason)?;
            ledger.next_ts = ledger.next_ts.max(e.ts + 1);
            ledger.membership.insert(e.pair_id.clone(), e.pool);
            ledger
                .applied
                .insert((e.pair_id.clone(), e.pool, e.iteration, e.reason));
            ledger.events.push(e);
        }
        Ok(ledger)
    }

    fn tick(&mut self) -> u64 {
        let ts = self.next_ts;
        self.next_ts += 1;
        ts
    }

    fn push_verdict(&mut self, v: Verdict) -> Result<(), LedgerError> {
        if v.is_human() {
            if self.human.contains_key(&v.pair_id) {
                return Err(LedgerError::DuplicateHumanVerdict(v.pair_id));
            }
            self.human.insert(v.pair_id.clone(), self.verdicts.len());
        }
        self.verdicts.push(v);
        Ok(())
    }

    fn check_gold(&self, pair: &PairId, reason: Reason) -> Result<(), LedgerError> {
        if reason.target() == Pool::Gold
            && reason != Reason::GoldRetention
            && !self.human.contains_key(pair)
        {
            return Err(LedgerError::GoldWithoutVerdict(pair.clone()));
        }
        Ok(())
    }

    /// Records a verdict. At most one human verdict per pair is accepted.
    pub fn record_verdict(&mut self, mut v: Verdict) -> Result<&Verdict, LedgerError> {
        if v.is_human() && self.human.contains_key(&v.pair_id) {
            return Err(LedgerError::DuplicateHumanVerdict(v.pair_id));
        }
        v.ts = self.tick();
        self.push_verdict(v)?;
        Ok(self.verdicts.last().expect("just pushed"))
    }

    /// Starts tracking a pair in the unverified pool.
    pub fn admit(&mut self, pair: &PairId, iteration: u32) -> Result<Applied, LedgerError> {
        if self
            .applied
            .contains(&(pair.clone(), Pool::Unverified, iteration, Reason::Ingest))
            && self.membership.get(pair) == Some(&Pool::Unverified)
        {
            return Ok(Applied::Replayed);
        }
        if self.membership.contains_key(pair) {
            return Err(LedgerError::AlreadyAdmitted(pair.clone()));
        }
        self.append(pair, Pool::Unverified, Reason::Ingest, iteration);
        Ok(Applied::Appended)
    }

    /// Moves `pair` from `from` to `to`, appending an audit event.
    pub fn transition(
        &mut self,
        pair: &PairId,
        from: Pool,
        to: Pool,
        reason: Reason,
        iteration: u32,
    ) -> Result<Applied, LedgerError> {
        let current = *self
            .membership
            .get(pair)
            .ok_or_else(|| LedgerError::UnknownPair(pair.clone()))?;
        if current == to && self.applied.contains(&(pair.clone(), to, iteration, reason)) {
            return Ok(Applied::Replayed);
        }
        if current != from {
            return Err(LedgerError::WrongPool {
                pair: pair.clone(),
                expected: from,
                actual: current,
            });
        }
        if reason.target() != to {
            return Err(LedgerError::ReasonMismatch { reason, pool: to });
        }
        self.check_gold(pair, reason)?;
        self.append(pair, to, reason, iteration);
        Ok(Applied::Appended)
    }

    fn append(&mut self, pair: &PairId, pool: Pool, reason: Reason, iteration: u32) {
        let ts = self.tick();
        self.membership.insert(pair.clone(), pool);
        self.applied.insert((pair.clone(), pool, iteration, reason));
        self.events.push(LedgerRecord {
            pair_id: pair.clone(),
            pool,
            iteration,
            reason,
            ts,
        });
    }

    /// Current members of `pool` in ascending id order.
    pub fn snapshot(&self, pool: Pool) -> Vec<PairId> {
        self.membership
            .iter()
            .filter(|(_, p)| **p == pool)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn pool_of(&self, pair: &PairId) -> Option<Pool> {
        self.membership.get(pair).copied()
    }

    pub fn counts(&self) -> BTreeMap<Pool, usize> {
        let mut out: BTreeMap<Pool, usize> = Pool::ALL.iter().map(|p| (*p, 0)).collect();
        for p in self.membership.values() {
            *out.get_mut(p).expect("all pools present") += 1;
        }
        out
    }

    pub fn events(&self) -> &[LedgerRecord] {
        &self.events
    }

    pub fn verdicts(&self) -> &[Verdict] {
        &self.verdicts
    }

    pub fn human_verdict(&self, pair: &PairId) -> Option<&Verdict> {
        self.human.get(pair).map(|&i| &self.verdicts[i])
    }

    pub fn history<'a>(&'a self, pair: &'a PairId) -> impl Iterator<Item = &'a LedgerRecord> + 'a {
        self.events.iter().filter(move |e| &e.pair_id == pair)
    }

    /// Latest event for a pair.
    pub fn last_event(&self, pair: &PairId) -> Option<&LedgerRecord> {
        self.events.iter().rev().find(|e| &e.pair_id == pair)
    }
}
