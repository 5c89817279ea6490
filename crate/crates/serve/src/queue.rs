use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use prefcurate::curate::Workspace;
use prefcurate::hash::derive_seed;
use prefcurate::judge::{HintOutcome, Permutation, PreverifyHint};
use prefcurate::ledger::{LedgerError, Outcome, Pool, Reason, Verdict};
use prefcurate::{AttributeSet, Controversiality, Objectivity, PairId, PreferencePair, Turn};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LEASE_TTL_MS: u64 = 30 * 60 * 1000;

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// A clock tests move by hand.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorityScheme {
    /// Objective before subjective, then low < medium < high controversiality.
    #[default]
    ObjectivityFirst,
    /// Controversiality first, objectivity as the tie-break.
    ControversialityFirst,
}

type PriorityKey = (u8, u8, PairId);

impl PriorityScheme {
    fn key(self, a: &AttributeSet) -> PriorityKey {
        let o = match a.objectivity {
            Objectivity::Objective => 0,
            Objectivity::Subjective => 1,
        };
        let c = match a.controversiality {
            Controversiality::Low => 0,
            Controversiality::Medium => 1,
            Controversiality::High => 2,
        };
        match self {
            PriorityScheme::ObjectivityFirst => (o, c, a.pair_id.clone()),
            PriorityScheme::ControversialityFirst => (c, o, a.pair_id.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueConfig {
    pub lease_ttl_ms: u64,
    pub max_renewals: u32,
    pub priority: PriorityScheme,
    /// Seeds the per-task display order.
    pub display_seed: u64,
    /// When set, only these annotator ids may lease.
    #[serde(default)]
    pub annotators: Option<BTreeSet<String>>,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            lease_ttl_ms: DEFAULT_LEASE_TTL_MS,
            max_renewals: 1,
            priority: PriorityScheme::default(),
            display_seed: 0,
            annotators: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lease {
    pub annotator: String,
    pub expires_at_ms: u64,
    pub renewals: u32,
}

/// What the annotator picked. `left`/`right` refer to the displayed order;
/// the rest refer to the stored orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Left,
    Right,
    Confirm,
    Swap,
    Discard,
}

impl Choice {
    pub fn resolve(self, display: Permutation) -> Outcome {
        match (self, display) {
            (Choice::Confirm, _) => Outcome::Confirm,
            (Choice::Swap, _) => Outcome::Swap,
            (Choice::Discard, _) => Outcome::Discard,
            (Choice::Left, Permutation::Identity) | (Choice::Right, Permutation::Swapped) => Outcome::Confirm,
            (Choice::Left, Permutation::Swapped) | (Choice::Right, Permutation::Identity) => Outcome::Swap,
        }
    }
}

/// One accepted verdict with everything needed to trace it back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub task_id: String,
    pub pair_id: PairId,
    pub annotator: String,
    pub display: Permutation,
    pub choice: Choice,
    pub outcome: Outcome,
    pub pool: Pool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    /// Logical timestamp of the ledger verdict.
    pub verdict_ts: u64,
    pub at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplayHints {
    pub left: HintOutcome,
    pub right: HintOutcome,
    pub model_id: String,
}

/// A task as served: responses in display order, no orientation leaked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub pair_id: PairId,
    pub conversation: Vec<Turn>,
    pub left: String,
    pub right: String,
    pub attrs: AttributeSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hints: Option<DisplayHints>,
    /// Position in the priority order, 0 first.
    pub priority: usize,
    pub lease: Lease,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDetail {
    pub pair: PreferencePair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attrs: Option<AttributeSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hints: Option<PreverifyHint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<Pool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub pools: BTreeMap<Pool, usize>,
    /// Tasks waiting for a lease.
    pub queue_depth: usize,
    pub leased: usize,
    pub completed: usize,
    pub per_annotator: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueueError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown pair {0}")]
    UnknownPair(PairId),
    #[error("pair {0} has no attributes")]
    MissingAttrs(PairId),
    #[error("pair {0} is not awaiting verification")]
    NotUnverified(PairId),
    #[error("annotator id {0:?} is not registered")]
    UnknownAnnotator(String),
    #[error("task {0} already has a verdict")]
    Duplicate(String),
    #[error("lease on task {0} has expired")]
    LeaseExpired(String),
    #[error("task {task} is not leased to {annotator}")]
    NotLeaseHolder { task: String, annotator: String },
    #[error("lease on task {0} cannot be renewed again")]
    RenewalLimit(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("persisting verdict failed: {0}")]
    Persist(String),
}

/// Receives every accepted verdict while the queue lock is held, so writes
/// land in decision order.
pub trait Persistence: Send + Sync {
    fn verdict_applied(&self, ws: &Workspace, audit: &AuditRecord) -> Result<(), String>;
}

pub struct NoPersistence;

impl Persistence for NoPersistence {
    fn verdict_applied(&self, _ws: &Workspace, _audit: &AuditRecord) -> Result<(), String> {
        Ok(())
    }
}

struct Entry {
    pair_id: PairId,
    key: PriorityKey,
    display: Permutation,
    lease: Option<Lease>,
    /// Annotators whose lease on this task ran out.
    expired_for: BTreeSet<String>,
    done: Option<AuditRecord>,
}

/// Priority queue of human-verification tasks with leases.
///
/// Not synchronized itself; the service wraps it in one lock, which is the
/// single decision point for leases and verdicts.
pub struct TaskQueue {
    cfg: QueueConfig,
    clock: Arc<dyn Clock>,
    persist: Arc<dyn Persistence>,
    ws: Workspace,
    tasks: BTreeMap<String, Entry>,
    /// Unleased, unfinished tasks in priority order.
    available: BTreeSet<(PriorityKey, String)>,
    leased: BTreeSet<String>,
    by_annotator: BTreeMap<String, String>,
    hints: BTreeMap<PairId, PreverifyHint>,
    counts: BTreeMap<String, usize>,
}

pub fn task_id_for(pair: &PairId) -> String {
    format!("task-{pair}")
}

fn display_for(seed: u64, pair: &PairId) -> Permutation {
    if derive_seed(seed, &format!("display/{pair}")) & 1 == 1 {
        Permutation::Swapped
    } else {
        Permutation::Identity
    }
}

impl TaskQueue {
    pub fn new(ws: Workspace, cfg: QueueConfig, clock: Arc<dyn Clock>, persist: Arc<dyn Persistence>) -> Self {
        TaskQueue {
            cfg,
            clock,
            persist,
            ws,
            tasks: BTreeMap::new(),
            available: BTreeSet::new(),
            leased: BTreeSet::new(),
            by_annotator: BTreeMap::new(),
            hints: BTreeMap::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &QueueConfig {
        &self.cfg
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn into_workspace(self) -> Workspace {
        self.ws
    }

    /// Adds unverified pairs as tasks. Already-queued pairs are skipped;
    /// returns how many were added. Nothing is added if any pair is invalid.
    pub fn enqueue(&mut self, ids: &[PairId]) -> Result<usize, QueueError> {
        for id in ids {
            if !self.ws.store.contains(id) {
                return Err(QueueError::UnknownPair(id.clone()));
            }
            if self.ws.store.attrs(id).is_none() {
                return Err(QueueError::MissingAttrs(id.clone()));
            }
            if self.ws.ledger.pool_of(id) != Some(Pool::Unverified) || self.ws.ledger.human_verdict(id).is_some() {
                return Err(QueueError::NotUnverified(id.clone()));
            }
        }
        let mut added = 0;
        for id in ids {
            let task_id = task_id_for(id);
            if self.tasks.contains_key(&task_id) {
                continue;
            }
            let attrs = self.ws.store.attrs(id).expect("checked above");
            let key = self.cfg.priority.key(attrs);
            self.available.insert((key.clone(), task_id.clone()));
            self.tasks.insert(
                task_id,
                Entry {
                    pair_id: id.clone(),
                    key,
                    display: display_for(self.cfg.display_seed, id),
                    lease: None,
                    expired_for: BTreeSet::new(),
                    done: None,
                },
            );
            added += 1;
        }
        Ok(added)
    }

    pub fn attach_hints(&mut self, hints: impl IntoIterator<Item = PreverifyHint>) {
        for h in hints {
            self.hints.insert(h.pair_id.clone(), h);
        }
    }

    fn check_annotator(&self, annotator: &str) -> Result<(), QueueError> {
        let ok = !annotator.trim().is_empty()
            && self.cfg.annotators.as_ref().is_none_or(|a| a.contains(annotator));
        if ok {
            Ok(())
        } else {
            Err(QueueError::UnknownAnnotator(annotator.to_string()))
        }
    }

    /// Returns expired leases to the queue at their original priority.
    fn reclaim(&mut self, now: u64) {
        let expired: Vec<String> = self
            .leased
            .iter()
            .filter(|t| {
                self.tasks[*t]
                    .lease
                    .as_ref()
                    .is_some_and(|l| l.expires_at_ms <= now)
            })
            .cloned()
            .collect();
        for t in expired {
            let e = self.tasks.get_mut(&t).expect("leased task exists");
            let lease = e.lease.take().expect("filtered on lease");
            e.expired_for.insert(lease.annotator.clone());
            self.by_annotator.remove(&lease.annotator);
            self.leased.remove(&t);
            self.available.insert((e.key.clone(), t));
        }
    }

    fn view(&self, task_id: &str) -> AnnotationTask {
        let e = &self.tasks[task_id];
        let pair = self.ws.store.get(&e.pair_id).expect("queued pairs are stored");
        let (left, right) = match e.display {
            Permutation::Identity => (&pair.chosen, &pair.rejected),
            Permutation::Swapped => (&pair.rejected, &pair.chosen),
        };
        let hints = self.hints.get(&e.pair_id).map(|h| {
            let (l, r) = match e.display {
                Permutation::Identity => (h.chosen, h.rejected),
                Permutation::Swapped => (h.rejected, h.chosen),
            };
            DisplayHints {
                left: l,
                right: r,
                model_id: h.model_id.clone(),
            }
        });
        let priority = self.tasks.values().filter(|o| o.key < e.key).count();
        AnnotationTask {
            task_id: task_id.to_string(),
            pair_id: e.pair_id.clone(),
            conversation: pair.conversation.clone(),
            left: left.clone(),
            right: right.clone(),
            attrs: self.ws.store.attrs(&e.pair_id).cloned().expect("queued pairs have attrs"),
            hints,
            priority,
            lease: e.lease.clone().expect("viewed tasks are leased"),
        }
    }

    /// Leases the highest-priority free task, or returns the caller's
    /// current lease if it still holds one.
    pub fn lease_next(&mut self, annotator: &str) -> Result<Option<AnnotationTask>, QueueError> {
        self.check_annotator(annotator)?;
        let now = self.clock.now_ms();
        self.reclaim(now);
        if let Some(t) = self.by_annotator.get(annotator) {
            return Ok(Some(self.view(&t.clone())));
        }
        let Some((key, task_id)) = self.available.pop_first() else {
            return Ok(None);
        };
        let e = self.tasks.get_mut(&task_id).expect("available task exists");
        debug_assert_eq!(e.key, key);
        e.lease = Some(Lease {
            annotator: annotator.to_string(),
            expires_at_ms: now + self.cfg.lease_ttl_ms,
            renewals: 0,
        });
        self.leased.insert(task_id.clone());
        self.by_annotator.insert(annotator.to_string(), task_id.clone());
        Ok(Some(self.view(&task_id)))
    }

    /// Checks that `annotator` holds a live lease on `task_id`.
    fn holder_check(&self, task_id: &str, annotator: &str, now: u64) -> Result<(), QueueError> {
        let e = self
            .tasks
            .get(task_id)
            .ok_or_else(|| QueueError::UnknownTask(task_id.to_string()))?;
        if e.done.is_some() {
            return Err(QueueError::Duplicate(task_id.to_string()));
        }
        match &e.lease {
            Some(l) if l.annotator == annotator => {
                if l.expires_at_ms <= now {
                    Err(QueueError::LeaseExpired(task_id.to_string()))
                } else {
                    Ok(())
                }
            }
            _ if e.expired_for.contains(annotator) => Err(QueueError::LeaseExpired(task_id.to_string())),
            _ => Err(QueueError::NotLeaseHolder {
                task: task_id.to_string(),
                annotator: annotator.to_string(),
            }),
        }
    }

    pub fn renew(&mut self, task_id: &str, annotator: &str) -> Result<Lease, QueueError> {
        let now = self.clock.now_ms();
        self.holder_check(task_id, annotator, now)?;
        let max = self.cfg.max_renewals;
        let ttl = self.cfg.lease_ttl_ms;
        let lease = self
            .tasks
            .get_mut(task_id)
            .and_then(|e| e.lease.as_mut())
            .expect("holder check passed");
        if lease.renewals >= max {
            return Err(QueueError::RenewalLimit(task_id.to_string()));
        }
        lease.renewals += 1;
        lease.expires_at_ms = now + ttl;
        Ok(lease.clone())
    }

    /// Records the annotator's verdict and moves the pair out of the
    /// unverified pool. Exactly one verdict per task is ever accepted.
    pub fn submit(
        &mut self,
        task_id: &str,
        annotator: &str,
        choice: Choice,
        rationale: Option<String>,
    ) -> Result<AuditRecord, QueueError> {
        let now = self.clock.now_ms();
        self.holder_check(task_id, annotator, now)?;
        let (pair_id, display) = {
            let e = &self.tasks[task_id];
            (e.pair_id.clone(), e.display)
        };
        let outcome = choice.resolve(display);
        let (pool, reason) = match outcome {
            Outcome::Confirm => (Pool::Gold, Reason::HumanConfirm),
            Outcome::Swap => (Pool::Gold, Reason::HumanSwap),
            Outcome::Discard => (Pool::Discarded, Reason::HumanDiscard),
        };
        let iteration = self
            .ws
            .ledger
            .events()
            .iter()
            .map(|e| e.iteration)
            .max()
            .unwrap_or(0);
        let mut v = Verdict::human(pair_id.clone(), annotator, outcome);
        v.rationale = rationale.clone();
        // Check the transition before writing the verdict so a refused move
        // leaves no trace.
        if self.ws.ledger.pool_of(&pair_id) != Some(Pool::Unverified) {
            return Err(QueueError::NotUnverified(pair_id));
        }
        let verdict_ts = self.ws.ledger.record_verdict(v)?.ts;
        self.ws
            .ledger
            .transition(&pair_id, Pool::Unverified, pool, reason, iteration)?;
        if outcome == Outcome::Swap {
            self.ws.store.swap_orientation(&pair_id);
        }
        let audit = AuditRecord {
            task_id: task_id.to_string(),
            pair_id,
            annotator: annotator.to_string(),
            display,
            choice,
            outcome,
            pool,
            rationale,
            verdict_ts,
            at_ms: now,
        };
        let e = self.tasks.get_mut(task_id).expect("checked");
        e.lease = None;
        e.done = Some(audit.clone());
        self.leased.remove(task_id);
        self.by_annotator.remove(annotator);
        *self.counts.entry(annotator.to_string()).or_default() += 1;
        self.persist
            .verdict_applied(&self.ws, &audit)
            .map_err(QueueError::Persist)?;
        Ok(audit)
    }

    pub fn pair_detail(&self, id: &PairId) -> Option<PairDetail> {
        let pair = self.ws.store.get(id)?.clone();
        let task_id = task_id_for(id);
        Some(PairDetail {
            attrs: self.ws.store.attrs(id).cloned(),
            hints: self.hints.get(id).cloned(),
            pool: self.ws.ledger.pool_of(id),
            task_id: self.tasks.contains_key(&task_id).then_some(task_id),
            pair,
        })
    }

    pub fn audit(&self) -> Vec<AuditRecord> {
        let mut out: Vec<AuditRecord> = self.tasks.values().filter_map(|e| e.done.clone()).collect();
        out.sort_by_key(|a| a.verdict_ts);
        out
    }

    pub fn stats(&self) -> Stats {
        let now = self.clock.now_ms();
        let live = self
            .leased
            .iter()
            .filter(|t| self.tasks[*t].lease.as_ref().is_some_and(|l| l.expires_at_ms > now))
            .count();
        Stats {
            pools: self.ws.ledger.counts(),
            queue_depth: self.available.len() + (self.leased.len() - live),
            leased: live,
            completed: self.tasks.values().filter(|e| e.done.is_some()).count(),
            per_annotator: self.counts.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use prefcurate::embed::PairEmbeddings;
    use prefcurate::Embedding;

    fn attrs(id: &PairId, o: Objectivity, c: Controversiality) -> AttributeSet {
        AttributeSet {
            pair_id: id.clone(),
            task_category: "general".into(),
            objectivity: o,
            controversiality: c,
            desired_attributes: vec!["helpful".into()],
            annotation_guideline: "pick the better answer".into(),
        }
    }

    fn workspace(spec: &[(Objectivity, Controversiality)]) -> (Workspace, Vec<PairId>) {
        let mut ws = Workspace::new();
        let mut ids = Vec::new();
        for (i, (o, c)) in spec.iter().enumerate() {
            let p = PreferencePair::new(vec![Turn::user(format!("q{i}"))], format!("good{i}"), format!("bad{i}"), "t").unwrap();
            let e = PairEmbeddings {
                context: Embedding::new(vec![1.0, 0.0]),
                chosen: Embedding::new(vec![1.0, i as f64]),
                rejected: Embedding::new(vec![0.0, i as f64]),
            };
            ids.push(p.id.clone());
            ws.add_pair(p.clone(), Some(attrs(&p.id, *o, *c)), Some(e), false).unwrap();
        }
        (ws, ids)
    }

    fn queue(ws: Workspace, clock: Arc<ManualClock>) -> TaskQueue {
        TaskQueue::new(ws, QueueConfig::default(), clock, Arc::new(NoPersistence))
    }

    #[test]
    fn objective_low_comes_before_objective_high() {
        use Controversiality::*;
        use Objectivity::*;
        let (ws, ids) = workspace(&[(Objective, High), (Objective, Low)]);
        let mut q = queue(ws, Arc::new(ManualClock::new(0)));
        q.enqueue(&ids).unwrap();
        assert_eq!(q.lease_next("a").unwrap().unwrap().pair_id, ids[1]);
        assert_eq!(q.lease_next("b").unwrap().unwrap().pair_id, ids[0]);
        assert!(q.lease_next("c").unwrap().is_none());
    }

    #[test]
    fn objectivity_dominates_controversiality() {
        use Controversiality::*;
        use Objectivity::*;
        let (ws, ids) = workspace(&[(Subjective, Low), (Objective, High)]);
        let mut q = queue(ws, Arc::new(ManualClock::new(0)));
        q.enqueue(&ids).unwrap();
        assert_eq!(q.lease_next("a").unwrap().unwrap().pair_id, ids[1]);
    }

    #[test]
    fn equal_attributes_serve_by_pair_id() {
        let spec = vec![(Objectivity::Subjective, Controversiality::Medium); 6];
        let (ws, ids) = workspace(&spec);
        let mut q = queue(ws, Arc::new(ManualClock::new(0)));
        q.enqueue(&ids).unwrap();
        let mut sorted = ids.clone();
        sorted.sort();
        let served: Vec<PairId> = (0..6)
            .map(|i| q.lease_next(&format!("a{i}")).unwrap().unwrap().pair_id)
            .collect();
        assert_eq!(served, sorted);
    }

    #[test]
    fn missing_attrs_cannot_be_enqueued() {
        let mut ws = Workspace::new();
        let p = PreferencePair::new(vec![Turn::user("q")], "a", "b", "t").unwrap();
        ws.add_pair(p.clone(), None, None, false).unwrap();
        let mut q = queue(ws, Arc::new(ManualClock::new(0)));
        assert_eq!(q.enqueue(std::slice::from_ref(&p.id)), Err(QueueError::MissingAttrs(p.id)));
    }

    #[test]
    fn refetch_returns_the_same_lease() {
        let (ws, ids) = workspace(&[(Objectivity::Objective, Controversiality::Low); 3]);
        let mut q = queue(ws, Arc::new(ManualClock::new(0)));
        q.enqueue(&ids).unwrap();
        let a = q.lease_next("a").unwrap().unwrap();
        let again = q.lease_next("a").unwrap().unwrap();
        assert_eq!(a, again);
        assert_eq!(q.stats().leased, 1);
    }

    #[test]
    fn expired_lease_returns_the_task_and_blocks_the_old_holder() {
        let (ws, ids) = workspace(&[(Objectivity::Objective, Controversiality::Low); 2]);
        let clock = Arc::new(ManualClock::new(1_000));
        let mut q = queue(ws, clock.clone());
        q.enqueue(&ids).unwrap();
        let first = q.lease_next("a").unwrap().unwrap();
        clock.advance(DEFAULT_LEASE_TTL_MS);
        assert_eq!(
            q.submit(&first.task_id, "a", Choice::Confirm, None),
            Err(QueueError::LeaseExpired(first.task_id.clone()))
        );
        // back at its original priority, ahead of the other task
        let second = q.lease_next("b").unwrap().unwrap();
        assert_eq!(second.task_id, first.task_id);
        assert_eq!(
            q.submit(&first.task_id, "a", Choice::Confirm, None),
            Err(QueueError::LeaseExpired(first.task_id.clone()))
        );
        assert!(matches!(
            q.submit(&first.task_id, "c", Choice::Confirm, None),
            Err(QueueError::NotLeaseHolder { .. })
        ));
        q.submit(&first.task_id, "b", Choice::Confirm, None).unwrap();
    }

    #[test]
    fn lease_renews_once() {
        let (ws, ids) = workspace(&[(Objectivity::Objective, Controversiality::Low)]);
        let clock = Arc::new(ManualClock::new(0));
        let mut q = queue(ws, clock.clone());
        q.enqueue(&ids).unwrap();
        let t = q.lease_next("a").unwrap().unwrap();
        clock.advance(DEFAULT_LEASE_TTL_MS - 1);
        let l = q.renew(&t.task_id, "a").unwrap();
        assert_eq!(l.expires_at_ms, DEFAULT_LEASE_TTL_MS - 1 + DEFAULT_LEASE_TTL_MS);
        assert_eq!(q.renew(&t.task_id, "a"), Err(QueueError::RenewalLimit(t.task_id.clone())));
        clock.advance(DEFAULT_LEASE_TTL_MS - 1);
        q.submit(&t.task_id, "a", Choice::Discard, None).unwrap();
    }

    #[test]
    fn displayed_left_on_swapped_task_stores_the_flip() {
        let spec = vec![(Objectivity::Objective, Controversiality::Low); 16];
        let (ws, ids) = workspace(&spec);
        let mut q = queue(ws, Arc::new(ManualClock::new(0)));
        q.enqueue(&ids).unwrap();
        let mut seen = [false; 2];
        for i in 0..16 {
            let t = q.lease_next(&format!("a{i}")).unwrap().unwrap();
            let before = q.workspace().store.get(&t.pair_id).unwrap().clone();
            let a = q.submit(&t.task_id, &format!("a{i}"), Choice::Left, None).unwrap();
            let after = q.workspace().store.get(&t.pair_id).unwrap();
            // whatever was shown on the left is now the chosen response
            assert_eq!(after.chosen, t.left);
            assert_eq!(q.workspace().ledger.pool_of(&t.pair_id), Some(Pool::Gold));
            match a.display {
                Permutation::Identity => {
                    assert_eq!(a.outcome, Outcome::Confirm);
                    assert_eq!(after, &before);
                    seen[0] = true;
                }
                Permutation::Swapped => {
                    assert_eq!(a.outcome, Outcome::Swap);
                    assert_eq!((&after.chosen, &after.rejected), (&before.rejected, &before.chosen));
                    let e = q.workspace().store.embeddings(&t.pair_id).unwrap();
                    assert_eq!(e.chosen.values()[0], 0.0);
                    seen[1] = true;
                }
            }
        }
        assert_eq!(seen, [true, true], "both display orders should occur");
    }

    #[test]
    fn second_verdict_is_rejected() {
        let (ws, ids) = workspace(&[(Objectivity::Objective, Controversiality::Low)]);
        let mut q = queue(ws, Arc::new(ManualClock::new(0)));
        q.enqueue(&ids).unwrap();
        let t = q.lease_next("a").unwrap().unwrap();
        q.submit(&t.task_id, "a", Choice::Discard, None).unwrap();
        assert_eq!(
            q.submit(&t.task_id, "a", Choice::Confirm, None),
            Err(QueueError::Duplicate(t.task_id.clone()))
        );
        assert_eq!(q.workspace().ledger.pool_of(&t.pair_id), Some(Pool::Discarded));
        assert_eq!(q.workspace().ledger.verdicts().len(), 1);
    }

    #[test]
    fn hints_follow_the_display_order() {
        let spec = vec![(Objectivity::Objective, Controversiality::Low); 8];
        let (ws, ids) = workspace(&spec);
        let mut q = queue(ws, Arc::new(ManualClock::new(0)));
        q.enqueue(&ids).unwrap();
        q.attach_hints(ids.iter().map(|id| PreverifyHint {
            pair_id: id.clone(),
            chosen: HintOutcome::Correct,
            rejected: HintOutcome::Incorrect,
            model_id: "v".into(),
        }));
        for i in 0..8 {
            let t = q.lease_next(&format!("a{i}")).unwrap().unwrap();
            let h = t.hints.unwrap();
            let good_left = t.left.starts_with("good");
            assert_eq!(h.left == HintOutcome::Correct, good_left);
            assert_eq!(h.right == HintOutcome::Correct, !good_left);
        }
    }

    #[test]
    fn unregistered_annotators_are_refused() {
        let (ws, ids) = workspace(&[(Objectivity::Objective, Controversiality::Low)]);
        let cfg = QueueConfig {
            annotators: Some(BTreeSet::from(["ann".to_string()])),
            ..Default::default()
        };
        let mut q = TaskQueue::new(ws, cfg, Arc::new(ManualClock::new(0)), Arc::new(NoPersistence));
        q.enqueue(&ids).unwrap();
        assert!(matches!(q.lease_next("other"), Err(QueueError::UnknownAnnotator(_))));
        assert!(matches!(q.lease_next(""), Err(QueueError::UnknownAnnotator(_))));
        assert!(q.lease_next("ann").unwrap().is_some());
    }
}
