//! HTTP front end over the session manager.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::Args;
use followup_core::form::FormSpec;
use followup_core::kb::KnowledgeBase;
use followup_core::service::{PatientKind, ServiceConfig, ServiceError, SessionManager};
use followup_core::transcript::Mode;
use followup_core::{FormError, Gateway, GatewayConfig, SystemClock};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::settings::{BackendChoice, CliError, DEFAULT_SEED};

pub const TOKEN_HEADER: &str = "x-api-token";

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Listen address; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Holds forms/{id}.json and sessions/{id}.jsonl.
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    /// sim, remote or scripted:PATH.
    #[arg(long, default_value = "sim")]
    pub backend: String,
    /// Seed for knowledge-base sampling.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Directory of prebuilt `{form_id}.kb.jsonl` and `{form_id}.grouping.json` files.
    #[arg(long)]
    pub kb_dir: Option<PathBuf>,
    /// Shared token required in the x-api-token header of every request but /healthz.
    #[arg(long, env = "FOLLOWUP_TOKEN")]
    pub token: Option<String>,
}

struct AppState {
    manager: SessionManager,
    token: Option<String>,
}

type Shared = Arc<AppState>;

enum ApiError {
    Service(ServiceError),
    Internal(String),
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError::Service(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = match self {
            ApiError::Service(e) => e,
            ApiError::Internal(message) => {
                return (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": "internal", "message": message}))).into_response()
            }
        };
        let message = e.to_string();
        let (status, code) = match &e {
            ServiceError::UnknownForm(_) => (StatusCode::NOT_FOUND, "unknown_form"),
            ServiceError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            ServiceError::FormExists(_) => (StatusCode::CONFLICT, "form_exists"),
            ServiceError::InvalidForm(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_form"),
            ServiceError::KbMissing(_) => (StatusCode::CONFLICT, "kb_missing"),
            ServiceError::LedgerMissing(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ledger_missing"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ServiceError::Busy { .. } => (StatusCode::TOO_MANY_REQUESTS, "busy"),
            ServiceError::MissingText => (StatusCode::UNPROCESSABLE_ENTITY, "missing_text"),
            ServiceError::Session(_) | ServiceError::Flow(_) | ServiceError::Preparation(_) | ServiceError::Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        let mut body = json!({"error": code, "message": message});
        match &e {
            ServiceError::Busy { retry_after_ms } => body["retry_after_ms"] = json!(retry_after_ms),
            ServiceError::InvalidForm(FormError::Invalid(report)) => body["findings"] = json!(report.findings),
            _ => {}
        }
        let mut response = (status, Json(body)).into_response();
        if let ServiceError::Busy { retry_after_ms } = e {
            let secs = retry_after_ms.div_ceil(1000).max(1);
            response.headers_mut().insert("retry-after", HeaderValue::from(secs));
        }
        response
    }
}

/// Runs a manager call off the async runtime; steps block on model calls.
async fn blocking<T: Send + 'static>(
    state: &Shared,
    f: impl FnOnce(&SessionManager) -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state.manager))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(ApiError::from)
}

async fn healthz(State(state): State<Shared>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "forms": state.manager.form_ids().len(),
        "sessions": state.manager.session_ids().len(),
    }))
}

async fn post_form(State(state): State<Shared>, body: String) -> Result<(StatusCode, Json<Value>), ApiError> {
    let form = FormSpec::from_json_unvalidated(&body).map_err(ServiceError::from)?;
    let entry = blocking(&state, move |m| m.register_form(form, None)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "form_id": entry.form.form_id,
            "questions": entry.form.questions.len(),
            "prepared": entry.kb.is_some(),
        })),
    ))
}

async fn get_form(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<FormSpec>, ApiError> {
    Ok(Json(state.manager.form(&id)?.form.clone()))
}

#[derive(Deserialize)]
struct CreateSession {
    form_id: String,
    #[serde(default = "default_mode")]
    mode: Mode,
    #[serde(default = "default_patient")]
    patient: PatientKind,
}

fn default_mode() -> Mode {
    Mode::Modular
}

fn default_patient() -> PatientKind {
    PatientKind::Live
}

async fn create_session(State(state): State<Shared>, Json(req): Json<CreateSession>) -> Result<Response, ApiError> {
    let view = blocking(&state, move |m| m.create_session(&req.form_id, req.mode, req.patient)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

#[derive(Deserialize)]
struct PostMessage {
    client_msg_id: Option<String>,
    text: Option<String>,
}

async fn post_message(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<PostMessage>,
) -> Result<Response, ApiError> {
    let view = blocking(&state, move |m| m.post_message(&id, req.client_msg_id.as_deref(), req.text.as_deref())).await?;
    Ok(Json(view).into_response())
}

async fn get_session(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(state.manager.current(&id)?).into_response())
}

async fn get_result(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(state.manager.result(&id)?).into_response())
}

async fn get_transcript(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(state.manager.transcript(&id)?).into_response())
}

async fn get_metrics(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(state.manager.metrics(&id)?).into_response())
}

async fn guard(State(state): State<Shared>, request: Request, next: Next) -> Response {
    let Some(token) = &state.token else { return next.run(request).await };
    let ok = request.uri().path() == "/healthz"
        || request.headers().get(TOKEN_HEADER).and_then(|v| v.to_str().ok()) == Some(token.as_str());
    if ok {
        next.run(request).await
    } else {
        (StatusCode::UNAUTHORIZED, Json(json!({"error": "unauthorized", "message": "missing or wrong api token"}))).into_response()
    }
}

fn router(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/forms", post(post_form))
        .route("/forms/{id}", get(get_form))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/result", get(get_result))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .layer(middleware::from_fn_with_state(state.clone(), guard))
        .with_state(state)
}

fn attach_prebuilt(manager: &SessionManager, dir: &Path) -> Result<(), CliError> {
    for form_id in manager.form_ids() {
        let kb_path = dir.join(format!("{form_id}.kb.jsonl"));
        let grouping_path = dir.join(format!("{form_id}.grouping.json"));
        if !kb_path.is_file() || !grouping_path.is_file() {
            continue;
        }
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| CliError::io(p, e));
        let kb = KnowledgeBase::from_jsonl(&read(&kb_path)?).map_err(|e| CliError::io(&kb_path, e))?;
        let grouping = serde_json::from_str(&read(&grouping_path)?).map_err(|e| CliError::io(&grouping_path, e))?;
        manager.attach_kb(&form_id, grouping, kb).map_err(|e| CliError::Finding(format!("{form_id}: {e}")))?;
        log::info!("{form_id}: attached prebuilt knowledge base");
    }
    Ok(())
}

fn build_manager(args: &ServeArgs) -> Result<SessionManager, CliError> {
    let choice: BackendChoice = args.backend.parse().map_err(CliError::Usage)?;
    let clock = Arc::new(SystemClock);
    let gateway = Gateway::with_config(choice.backend()?, GatewayConfig::default(), clock.clone());
    let patient_gateway = Gateway::with_config(choice.patient_backend()?, GatewayConfig::default(), clock.clone());
    let mut config = ServiceConfig { data_dir: Some(args.data_dir.clone()), prepare_on_register: true, ..ServiceConfig::default() };
    config.kb.seed = args.seed;
    let manager = SessionManager::new(Arc::new(gateway), Arc::new(patient_gateway), clock, config);
    let fail = |e: ServiceError| CliError::Io(format!("startup: {e}"));
    manager.register_replicas().map_err(fail)?;
    if let Some(dir) = &args.kb_dir {
        attach_prebuilt(&manager, dir)?;
    }
    let active = manager.recover().map_err(fail)?;
    let resumed = manager.resume_interrupted().map_err(fail)?;
    log::info!("recovered {} active session(s), finished {} interrupted step(s)", active.len(), resumed.len());
    Ok(manager)
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let manager = build_manager(&args)?;
    let state = Arc::new(AppState { manager, token: args.token.clone() });
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr).await.map_err(|e| CliError::Io(format!("{}: {e}", args.addr)))?;
        let local = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        println!("listening on http://{local}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Io(e.to_string()))
    })
}
