use std::future::Future;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prefcurate::PairId;
use serde::{Deserialize, Serialize};

use crate::queue::{Choice, QueueError, TaskQueue};

pub const ENV_TOKEN: &str = "PREFCURATE_SERVE_TOKEN";

pub struct AppState {
    pub queue: RwLock<TaskQueue>,
    /// Bearer token every request must carry; `None` disables auth.
    pub token: Option<String>,
}

impl AppState {
    pub fn new(queue: TaskQueue, token: Option<String>) -> Arc<Self> {
        Arc::new(AppState {
            queue: RwLock::new(queue),
            token,
        })
    }

    /// Token from [`ENV_TOKEN`], if set and non-empty.
    pub fn token_from_env() -> Option<String> {
        std::env::var(ENV_TOKEN).ok().filter(|t| !t.is_empty())
    }
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.0,
            Json(ErrorBody {
                error: self.1.to_string(),
                message: self.2,
            }),
        )
            .into_response()
    }
}

impl From<QueueError> for ApiError {
    fn from(e: QueueError) -> Self {
        let (status, code) = match &e {
            QueueError::UnknownTask(_) | QueueError::UnknownPair(_) => (StatusCode::NOT_FOUND, "not-found"),
            QueueError::Duplicate(_) => (StatusCode::CONFLICT, "duplicate"),
            QueueError::RenewalLimit(_) => (StatusCode::CONFLICT, "renewal-limit"),
            QueueError::LeaseExpired(_) => (StatusCode::GONE, "lease-expired"),
            QueueError::NotLeaseHolder { .. } => (StatusCode::FORBIDDEN, "not-lease-holder"),
            QueueError::UnknownAnnotator(_) => (StatusCode::FORBIDDEN, "unknown-annotator"),
            QueueError::MissingAttrs(_) | QueueError::NotUnverified(_) => (StatusCode::CONFLICT, "not-servable"),
            QueueError::Ledger(_) | QueueError::Persist(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            log::error!("{e}");
        }
        ApiError(status, code, e.to_string())
    }
}

fn poisoned() -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", "queue lock poisoned".into())
}

#[derive(Deserialize)]
pub struct NextQuery {
    pub annotator: String,
}

#[derive(Serialize, Deserialize)]
pub struct VerdictRequest {
    pub annotator: String,
    pub outcome: Choice,
    #[serde(default)]
    pub rationale: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct RenewRequest {
    pub annotator: String,
}

async fn next_task(State(s): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let task = s.queue.write().map_err(|_| poisoned())?.lease_next(&q.annotator)?;
    Ok(match task {
        Some(t) => Json(t).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit_verdict(
    State(s): State<Arc<AppState>>,
    Path(task_id): Path<String>,
    Json(body): Json<VerdictRequest>,
) -> Result<Response, ApiError> {
    let audit = s
        .queue
        .write()
        .map_err(|_| poisoned())?
        .submit(&task_id, &body.annotator, body.outcome, body.rationale)?;
    Ok((StatusCode::CREATED, Json(audit)).into_response())
}

async fn renew_lease(
    State(s): State<Arc<AppState>>,
    Path(task_id): Path<String>,
    Json(body): Json<RenewRequest>,
) -> Result<Response, ApiError> {
    let lease = s.queue.write().map_err(|_| poisoned())?.renew(&task_id, &body.annotator)?;
    Ok(Json(lease).into_response())
}

async fn pair_detail(State(s): State<Arc<AppState>>, Path(pair_id): Path<String>) -> Result<Response, ApiError> {
    let id = PairId::new(pair_id);
    let detail = s.queue.read().map_err(|_| poisoned())?.pair_detail(&id);
    detail
        .map(|d| Json(d).into_response())
        .ok_or_else(|| QueueError::UnknownPair(id).into())
}

async fn stats(State(s): State<Arc<AppState>>) -> Result<Response, ApiError> {
    Ok(Json(s.queue.read().map_err(|_| poisoned())?.stats()).into_response())
}

async fn require_token(State(s): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token".into())
                .into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/tasks/next", get(next_task))
        .route("/api/v1/tasks/{task_id}/verdict", post(submit_verdict))
        .route("/api/v1/tasks/{task_id}/renew", post(renew_lease))
        .route("/api/v1/pairs/{pair_id}", get(pair_detail))
        .route("/api/v1/stats", get(stats))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
