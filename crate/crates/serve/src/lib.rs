//! Annotation service.
//!
//! Human verifiers lease prioritized tasks over HTTP and return a verdict
//! per task. Responses are shown in a seeded random order and the server
//! maps "left"/"right" back to the stored orientation. Objective pairs may
//! carry per-response pre-verification hints. Accepted verdicts move pairs
//! into gold (or discarded) through the same ledger the pipeline uses.
//!
//! ```text
//! GET  /api/v1/tasks/next?annotator=ID     200 task | 204 empty
//! POST /api/v1/tasks/{task_id}/verdict     201 | 403 | 404 | 409 | 410
//! POST /api/v1/tasks/{task_id}/renew       200 | 403 | 409 | 410
//! GET  /api/v1/pairs/{pair_id}             200 | 404
//! GET  /api/v1/stats                       200
//! ```

mod api;
mod persist;
mod queue;

pub use api::{router, serve, AppState, ErrorBody, NextQuery, RenewRequest, VerdictRequest, ENV_TOKEN};
pub use persist::RunDirPersistence;
pub use queue::{
    task_id_for, AnnotationTask, AuditRecord, Choice, Clock, DisplayHints, Lease, ManualClock,
    NoPersistence, PairDetail, Persistence, PriorityScheme, QueueConfig, QueueError, Stats,
    SystemClock, TaskQueue, DEFAULT_LEASE_TTL_MS,
};
