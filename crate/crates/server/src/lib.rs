//! REST front end for [`SessionManager`].
//!
//! Manager calls block on LLM requests, so every handler runs them on the
//! blocking pool.

pub mod config;

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use coe_core::session::{Demographics, ExportFilter, QuestionnaireResponse, SessionError, SessionManager};

pub use config::{GatewayConfig, ServerConfig};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        Self(e)
    }
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        use SessionError::*;
        match &self.0 {
            NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            WrongStage { .. } => (StatusCode::CONFLICT, "wrong_stage"),
            TurnLimit(_) => (StatusCode::CONFLICT, "turn_limit"),
            EmptyText => (StatusCode::BAD_REQUEST, "empty_text"),
            OpeningPending => (StatusCode::CONFLICT, "opening_pending"),
            OpeningDone => (StatusCode::CONFLICT, "opening_done"),
            InvalidQuestionnaire(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_questionnaire"),
            DuplicateSubmission(_) => (StatusCode::CONFLICT, "duplicate_submission"),
            ConditionMismatch { .. } => (StatusCode::CONFLICT, "condition_mismatch"),
            Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            Agent(_) => (StatusCode::BAD_GATEWAY, "agent_failure"),
            Persist(_) => (StatusCode::INTERNAL_SERVER_ERROR, "persistence"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": self.0.to_string(), "code": code }))).into_response()
    }
}

type Shared = Arc<SessionManager>;

async fn blocking<T, F>(manager: Shared, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&SessionManager) -> Result<T, SessionError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&manager))
        .await
        .expect("session task panicked")
        .map_err(ApiError)
}

async fn create_session(State(m): State<Shared>) -> Result<impl IntoResponse, ApiError> {
    let start = blocking(m, |m| m.create_session()).await?;
    Ok((StatusCode::CREATED, Json(start)))
}

async fn get_session(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let s = blocking(m, move |m| m.get(&id)).await?;
    Ok(Json(json!({
        "session_id": s.id,
        "stage": s.stage,
        "condition_order": s.condition_order,
        "condition_index": s.current_condition_index,
        "condition": s.current().strategy,
        "character_seed": s.current().character_seed,
        "turn_count": s.current().turn_count,
        "error": s.current().last_error,
    })))
}

#[derive(Deserialize)]
struct TurnBody {
    text: String,
}

async fn post_turn(
    State(m): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<TurnBody>,
) -> Result<impl IntoResponse, ApiError> {
    let key = headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let outcome = blocking(m, move |m| m.post_turn(&id, &body.text, key.as_deref())).await?;
    Ok(Json(outcome))
}

async fn retry_opening(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(m, move |m| m.retry_opening(&id)).await?))
}

async fn transcript(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(m, move |m| m.transcript(&id)).await?))
}

async fn questionnaire(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<QuestionnaireResponse>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(m, move |m| m.submit_questionnaire(&id, &body)).await?))
}

async fn demographics(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<Demographics>,
) -> Result<impl IntoResponse, ApiError> {
    blocking(m, move |m| m.submit_demographics(&id, body)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    filter: ExportFilter,
}

async fn export(
    State(m): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<ExportQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::to_string);
    let records = blocking(m, move |m| m.export(token.as_deref(), q.filter)).await?;
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r).expect("export record serializes"));
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

async fn healthz(State(m): State<Shared>) -> impl IntoResponse {
    Json(json!({ "status": "ok", "sessions": m.session_count() }))
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/turns", post(post_turn))
        .route("/sessions/:id/retry", post(retry_opening))
        .route("/sessions/:id/transcript", get(transcript))
        .route("/sessions/:id/questionnaire", post(questionnaire))
        .route("/sessions/:id/demographics", post(demographics))
        .route("/admin/export", get(export))
        .with_state(manager)
}

/// Builds the manager outside any async context (the blocking HTTP client
/// must not be created inside the runtime).
pub fn build_manager(config: &ServerConfig) -> anyhow::Result<Arc<SessionManager>> {
    let clock = config.clock();
    let gateway = config.gateway.build(clock.clone())?;
    let manager = SessionManager::open(config.service_config()?, Arc::new(gateway), clock)?;
    Ok(Arc::new(manager))
}

pub fn serve(config: &ServerConfig) -> anyhow::Result<()> {
    let manager = build_manager(config)?;
    if manager.config().admin_token.is_none() {
        log::warn!("{} is not set; /admin/export will reject every request", config.admin_token_env);
    }
    let addr = format!("{}:{}", config.bind, config.port);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        log::info!("listening on {addr}");
        axum::serve(listener, router(manager)).await?;
        Ok(())
    })
}
