//! HTTP routes.
//!
//! | method | path | body / reply |
//! |---|---|---|
//! | GET | `/health` | `{"status":"ok"}` |
//! | GET | `/config` | client configuration document |
//! | POST | `/sessions` | [`CreateSession`] → [`SessionView`] |
//! | GET | `/sessions/{id}` | [`SessionView`] |
//! | GET | `/sessions/{id}/stimulus` | [`Next`] |
//! | POST | `/sessions/{id}/responses` | [`SubmitResponse`] → [`SessionView`] |
//! | GET | `/results` | line-delimited [`ResultRecord`]s |
//! | GET | `/scores` | [`HumanReport`] |
//! | GET | `/images/...` | image bytes, when an image root is configured |

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::model::{CreateSession, Mode, SubmitResponse};
use crate::scoring::score_sessions;
use crate::service::Experiment;
use crate::ExperimentError;

impl ExperimentError {
    pub fn status(&self) -> StatusCode {
        match self {
            ExperimentError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ExperimentError::Corpus(_) => StatusCode::NOT_FOUND,
            ExperimentError::CapExceeded { .. }
            | ExperimentError::Completed(_)
            | ExperimentError::DuplicateResponse(_)
            | ExperimentError::NotCurrentItem { .. }
            | ExperimentError::IdempotencyConflict(_) => StatusCode::CONFLICT,
            ExperimentError::NoItems | ExperimentError::InvalidSelection(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ExperimentError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ExperimentError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ExperimentError::Corpus(_) => "unknown_dialogue",
            ExperimentError::UnknownSession(_) => "unknown_session",
            ExperimentError::CapExceeded { .. } => "cap_exceeded",
            ExperimentError::NoItems => "no_items",
            ExperimentError::Completed(_) => "completed",
            ExperimentError::DuplicateResponse(_) => "duplicate_response",
            ExperimentError::NotCurrentItem { .. } => "not_current_item",
            ExperimentError::InvalidSelection(_) => "invalid_selection",
            ExperimentError::IdempotencyConflict(_) => "idempotency_conflict",
            ExperimentError::BadRequest(_) => "bad_request",
            ExperimentError::Storage(_) => "storage",
        }
    }
}

impl IntoResponse for ExperimentError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "error": self.kind(), "reason": self.to_string() }));
        (self.status(), body).into_response()
    }
}

type Shared = State<Arc<Experiment>>;

async fn health() -> impl IntoResponse {
    Json(json!({ "status": "ok" }))
}

async fn config(State(x): Shared) -> impl IntoResponse {
    Json(json!({
        "api_base": "/",
        "modes": [Mode::Independent, Mode::Holistic],
        "images": x.config().image_root.is_some(),
        "image_sets": x.corpus().image_sets.iter().map(|s| &s.set_id).collect::<Vec<_>>(),
    }))
}

async fn create(
    State(x): Shared,
    Json(req): Json<CreateSession>,
) -> Result<impl IntoResponse, ExperimentError> {
    let view = x.create_session(&req)?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn session(
    State(x): Shared,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ExperimentError> {
    Ok(Json(x.session(&id)?))
}

async fn stimulus(
    State(x): Shared,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ExperimentError> {
    Ok(Json(x.next_stimulus(&id)?))
}

async fn submit(
    State(x): Shared,
    Path(id): Path<String>,
    Json(req): Json<SubmitResponse>,
) -> Result<impl IntoResponse, ExperimentError> {
    Ok(Json(x.submit_response(&id, &req)?))
}

async fn results(State(x): Shared) -> impl IntoResponse {
    let mut body = String::new();
    for r in x.export_results() {
        body.push_str(&serde_json::to_string(&r).expect("serializable"));
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body)
}

async fn scores(State(x): Shared) -> Result<impl IntoResponse, ExperimentError> {
    Ok(Json(score_sessions(&x.sessions(), x.corpus())?))
}

pub fn router(experiment: Arc<Experiment>) -> Router {
    let image_root = experiment.config().image_root.clone();
    let mut r = Router::new()
        .route("/health", get(health))
        .route("/config", get(config))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/stimulus", get(stimulus))
        .route("/sessions/{id}/responses", post(submit))
        .route("/results", get(results))
        .route("/scores", get(scores))
        .with_state(experiment);
    if let Some(root) = image_root {
        r = r.nest_service("/images", ServeDir::new(root));
    }
    r
}

/// Serves until the process is stopped.
pub async fn serve(experiment: Arc<Experiment>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(experiment)).await
}
