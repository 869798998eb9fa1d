//! HTTP front end for consensus runs.
//!
//! * `POST /v1/consensus`: multipart upload with parts `annotations`
//!   (required), `tasks`, `workers` (optional) and `config` (required, JSON).
//! * `POST /v1/consensus/platform`: `{"project_id": ..., "config": {...}}`;
//!   data is fetched from the configured platform.
//! * `GET /v1/health`.
//!
//! Both consensus routes answer with a ZIP bundle or a JSON error body.

pub mod error;
pub mod platform;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cck_io::{run_consensus, RawInputs, RunConfig};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

pub use error::ApiError;
pub use platform::{PlatformClient, PlatformError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_BIND_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind_addr: String,
    pub platform_base_url: Option<String>,
    pub platform_api_key: Option<String>,
    pub platform_page_size: usize,
    pub max_upload_bytes: usize,
    /// Upper bound on consensus runs executing at once.
    pub max_parallel_runs: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind_addr: DEFAULT_BIND_ADDR.into(),
            platform_base_url: None,
            platform_api_key: None,
            platform_page_size: platform::DEFAULT_PAGE_SIZE,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            max_parallel_runs: std::thread::available_parallelism().map_or(2, |n| n.get()),
        }
    }
}

impl ServiceConfig {
    /// Reads `CCK_BIND_ADDR`, `CCK_PLATFORM_BASE_URL`, `CCK_PLATFORM_API_KEY`
    /// and `CCK_MAX_UPLOAD_BYTES`; unset variables keep their defaults.
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut c = Self::default();
        let set = |k: &str| lookup(k).filter(|v| !v.is_empty());
        if let Some(v) = set("CCK_BIND_ADDR") {
            c.bind_addr = v;
        }
        c.platform_base_url = set("CCK_PLATFORM_BASE_URL");
        c.platform_api_key = set("CCK_PLATFORM_API_KEY");
        if let Some(v) = set("CCK_MAX_UPLOAD_BYTES") {
            c.max_upload_bytes = v
                .parse()
                .map_err(|_| format!("CCK_MAX_UPLOAD_BYTES is not a byte count: \"{v}\""))?;
        }
        Ok(c)
    }
}

struct AppState {
    config: ServiceConfig,
    runs: Semaphore,
    platform: Option<PlatformClient>,
}

pub fn router(config: ServiceConfig) -> Router {
    let platform = config.platform_base_url.as_ref().map(|url| {
        PlatformClient::new(url.clone(), config.platform_api_key.clone(), config.platform_page_size)
    });
    let state = Arc::new(AppState {
        runs: Semaphore::new(config.max_parallel_runs.max(1)),
        platform,
        config,
    });
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/consensus", post(consensus_upload))
        .route("/v1/consensus/platform", post(consensus_platform))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Binds and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&config.bind_addr).await?;
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!("listening on {addr}");
    eprintln!("cck service listening on http://{addr}");
    axum::serve(listener, router(config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": VERSION }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "MethodNotAllowed", "method not allowed")
}

fn zip_response(bytes: Vec<u8>) -> Response {
    (
        [
            (header::CONTENT_TYPE, "application/zip"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"consensus.zip\""),
        ],
        bytes,
    )
        .into_response()
}

async fn run_bounded(
    state: &AppState,
    inputs: RawInputs,
    config: RunConfig,
) -> Result<Vec<u8>, ApiError> {
    let _permit = state.runs.acquire().await.map_err(ApiError::internal)?;
    let out = tokio::task::spawn_blocking(move || run_consensus(&inputs, &config))
        .await
        .map_err(ApiError::internal)??;
    Ok(out.zip())
}

async fn consensus_upload(
    State(state): State<Arc<AppState>>,
    mut multipart: Multipart,
) -> Result<Response, ApiError> {
    let limit = state.config.max_upload_bytes;
    let too_large = || {
        ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge", "upload too large")
            .with_detail(json!({ "max_bytes": limit }))
    };
    let mut annotations = None;
    let mut tasks = None;
    let mut workers = None;
    let mut config = None;
    let mut total = 0usize;
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(too_large()),
            Err(e) => return Err(ApiError::bad_request(e.body_text())),
        };
        let name = field.name().unwrap_or_default().to_string();
        let bytes = match field.bytes().await {
            Ok(b) => b,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(too_large()),
            Err(e) => return Err(ApiError::bad_request(e.body_text())),
        };
        total += bytes.len();
        if total > limit {
            return Err(too_large());
        }
        let slot = match name.as_str() {
            "annotations" => &mut annotations,
            "tasks" => &mut tasks,
            "workers" => &mut workers,
            "config" => &mut config,
            other => {
                return Err(ApiError::bad_request(format!("unexpected part \"{other}\""))
                    .with_detail(json!({ "part": other })))
            }
        };
        if slot.replace(bytes).is_some() {
            return Err(ApiError::bad_request(format!("part \"{name}\" given twice"))
                .with_detail(json!({ "part": name })));
        }
    }
    let missing = |part: &str| {
        ApiError::bad_request(format!("missing part \"{part}\"")).with_detail(json!({ "part": part }))
    };
    let annotations = annotations.ok_or_else(|| missing("annotations"))?;
    let config = config.ok_or_else(|| missing("config"))?;
    let config = RunConfig::from_json(&config)?;
    let inputs = RawInputs::from_csv(&annotations, tasks.as_deref(), workers.as_deref())?;
    Ok(zip_response(run_bounded(&state, inputs, config).await?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlatformRequest {
    project_id: Value,
    #[serde(default)]
    config: Option<Value>,
}

async fn consensus_platform(
    State(state): State<Arc<AppState>>,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let request: PlatformRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    let project_id = match &request.project_id {
        Value::String(s) if !s.is_empty() => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => return Err(ApiError::bad_request("project_id must be a string or number")),
    };
    let config = match request.config {
        Some(c) => RunConfig::from_json(&serde_json::to_vec(&c).map_err(ApiError::internal)?)?,
        None => RunConfig::default(),
    };
    let client = state.platform.as_ref().ok_or_else(|| {
        ApiError::new(StatusCode::BAD_GATEWAY, "PlatformUnreachable", "no platform configured")
    })?;
    let inputs = client.fetch_project(&project_id).await?;
    Ok(zip_response(run_bounded(&state, inputs, config).await?))
}
