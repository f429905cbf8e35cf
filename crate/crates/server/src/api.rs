//! HTTP routes over a shared [`Core`].

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use aeos_core::campaign::{CampaignSpec, CampaignState, ControlAction, EngineError, ExperimentStatus};
use aeos_core::journal::{ExperimentQuery, ExportFormat};
use aeos_core::registry::ExecError;
use aeos_core::service::{Core, CoreError};
use aeos_core::wire::{canonical_encode, from_data, parse, to_data, DataValue, Record, Violation};
use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use tower_http::services::ServeDir;

use crate::events;

const INDEX_HTML: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>aeos</title></head>\n<body><h1>aeos</h1><p>The operator console is not installed. The HTTP API is served under <code>/api</code>.</p></body></html>\n";

#[derive(Clone)]
pub struct AppState {
    pub core: Arc<Core>,
    /// Latest journal seq, updated by a journal hook.
    pub head: Arc<watch::Sender<u64>>,
    pub keepalive: Duration,
}

impl AppState {
    pub fn new(core: Arc<Core>, keepalive: Duration) -> Self {
        let head = Arc::new(watch::Sender::new(core.journal().head()));
        let hook = Arc::clone(&head);
        core.journal().subscribe(move |e| {
            hook.send_replace(e.seq);
        });
        Self { core, head, keepalive }
    }
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<Vec<Violation>>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { status: status.as_u16(), code: code.into(), detail: detail.into(), violations: None }
    }

    fn malformed(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "Malformed", detail)
    }

    fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", detail)
    }
}

fn exec_status(e: &ExecError) -> StatusCode {
    match e {
        ExecError::NoProvider => StatusCode::SERVICE_UNAVAILABLE,
        ExecError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
        ExecError::ModuleError { .. } => StatusCode::BAD_GATEWAY,
        ExecError::SchemaViolation(_) | ExecError::Coercion(_) => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let detail = e.to_string();
        match e {
            CoreError::UnknownCampaign(_) => Self::new(StatusCode::NOT_FOUND, "UnknownCampaign", detail),
            CoreError::UnknownModule(_) => Self::new(StatusCode::NOT_FOUND, "UnknownModule", detail),
            CoreError::DuplicateCampaign(_) => Self::new(StatusCode::CONFLICT, "DuplicateCampaign", detail),
            CoreError::Invalid(v) => {
                Self { violations: Some(v), ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed", detail) }
            }
            CoreError::Engine(EngineError::InvalidTransition { .. }) => {
                Self::new(StatusCode::CONFLICT, "InvalidTransition", detail)
            }
            CoreError::Engine(EngineError::NotRunning(_)) => Self::new(StatusCode::CONFLICT, "NotRunning", detail),
            CoreError::Exec(x) => Self::new(exec_status(&x), x.code(), detail),
            CoreError::Engine(EngineError::Journal(_)) | CoreError::Journal(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "JournalFailure", detail)
            }
            CoreError::Replay(_) | CoreError::Export(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", detail)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        json(status, &self)
    }
}

/// Serializes `value` as canonical JSON.
pub fn json<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match to_data(value).map_err(|e| e.to_string()).and_then(|v| canonical_encode(&v).map_err(|e| e.to_string())) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => {
            log::error!("cannot encode response: {e}");
            (StatusCode::INTERNAL_SERVER_ERROR, [(header::CONTENT_TYPE, "application/json")], canonical_error(&e))
                .into_response()
        }
    }
}

fn canonical_error(detail: &str) -> Vec<u8> {
    let v = DataValue::record([("code", DataValue::from("Internal")), ("detail", DataValue::from(detail))]);
    canonical_encode(&v).unwrap_or_default()
}

type ApiResult = Result<Response, ApiError>;

fn body_value(body: &Bytes) -> Result<DataValue, ApiError> {
    parse(body).map_err(|e| ApiError::malformed(format!("request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, CoreError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn list_modules(State(s): State<AppState>) -> ApiResult {
    Ok(json(StatusCode::OK, &s.core.modules()))
}

async fn get_module(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json(StatusCode::OK, &s.core.module(&id)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExecuteBody {
    capability: String,
    #[serde(default)]
    inputs: Record,
}

async fn execute(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: ExecuteBody = from_data(&body_value(&body)?).map_err(|e| ApiError::malformed(e.to_string()))?;
    let core = Arc::clone(&s.core);
    let out = blocking(move || core.manual_execute(&id, &req.capability, &req.inputs)).await?;
    Ok(json(StatusCode::OK, &out))
}

async fn list_campaigns(State(s): State<AppState>) -> ApiResult {
    Ok(json(StatusCode::OK, &s.core.campaigns()))
}

/// Response to a successful campaign creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub campaign: CampaignState,
    pub warnings: Vec<String>,
}

async fn create_campaign(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let spec: CampaignSpec = from_data(&body_value(&body)?).map_err(|e| ApiError::malformed(e.to_string()))?;
    let core = Arc::clone(&s.core);
    let (campaign, warnings) = blocking(move || core.create_campaign(spec)).await?;
    Ok(json(StatusCode::CREATED, &Created { campaign, warnings }))
}

async fn get_campaign(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json(StatusCode::OK, &s.core.campaign_state(&id)?))
}

async fn control(State(s): State<AppState>, Path((id, action)): Path<(String, String)>) -> ApiResult {
    let action: ControlAction = action.parse().map_err(|_| ApiError::not_found(format!("no action {action:?}")))?;
    let core = Arc::clone(&s.core);
    let state = blocking(move || core.control(&id, action)).await?;
    Ok(json(StatusCode::OK, &state))
}

fn query_u64(q: &HashMap<String, String>, key: &str) -> Result<Option<u64>, ApiError> {
    q.get(key)
        .map(|v| v.parse::<u64>().map_err(|_| ApiError::malformed(format!("{key} must be a non-negative integer"))))
        .transpose()
}

async fn experiments(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let status = q
        .get("status")
        .map(|v| v.parse::<ExperimentStatus>().map_err(|_| ApiError::malformed(format!("unknown status {v:?}"))))
        .transpose()?;
    let query = ExperimentQuery { status, from: query_u64(&q, "from")?, to: query_u64(&q, "to")? };
    Ok(json(StatusCode::OK, &s.core.experiments(&id, &query)?))
}

async fn export(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let format: ExportFormat =
        q.get("format").map(String::as_str).unwrap_or("json").parse().map_err(ApiError::malformed)?;
    let bytes = s.core.export(&id, format)?;
    let ext = match format {
        ExportFormat::Csv => "csv",
        ExportFormat::Json => "json",
    };
    let disposition = HeaderValue::from_str(&format!("attachment; filename=\"{id}.{ext}\""))
        .unwrap_or(HeaderValue::from_static("attachment"));
    Ok((
        StatusCode::OK,
        [
            (header::CONTENT_TYPE, HeaderValue::from_static(format.content_type())),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

async fn event_stream(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let since = query_u64(&q, "since")?.unwrap_or(0);
    let head = s.core.journal().head();
    if since > head {
        return Err(ApiError::malformed(format!("since {since} is beyond the journal head {head}")));
    }
    let stream = events::stream(Arc::clone(&s.core), s.head.subscribe(), since, s.keepalive);
    Ok((
        StatusCode::OK,
        [(header::CONTENT_TYPE, "application/x-ndjson"), (header::CACHE_CONTROL, "no-cache")],
        Body::from_stream(stream),
    )
        .into_response())
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "MethodNotAllowed", "method not allowed on this endpoint")
}

async fn index() -> Response {
    ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], INDEX_HTML).into_response()
}

/// The full route table. Static assets come from `ui_dir` when given.
pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/modules", get(list_modules))
        .route("/api/modules/{id}", get(get_module))
        .route("/api/modules/{id}/execute", post(execute))
        .route("/api/campaigns", get(list_campaigns).post(create_campaign))
        .route("/api/campaigns/{id}", get(get_campaign))
        .route("/api/campaigns/{id}/experiments", get(experiments))
        .route("/api/campaigns/{id}/export", get(export))
        .route("/api/campaigns/{id}/{action}", post(control))
        .route("/api/events", get(event_stream))
        .route("/api", get(api_not_found))
        .route("/api/{*rest}", get(api_not_found).post(api_not_found))
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}
