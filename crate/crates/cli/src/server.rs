//! JSON-over-HTTP front end for one [`Engine`].
//!
//! | route              | body                 | success |
//! |--------------------|----------------------|---------|
//! | `POST /v1/sessions`| a session record     | 202 + ingest report |
//! | `POST /v1/query`   | [`QueryRequest`]     | 200 + [`QueryResponse`] |
//! | `GET /v1/health`   |                      | 200 + [`Health`] |
//!
//! Errors come back as `{"error": {"code", "message", "path"?}}`. PageRank
//! latency goes in the `server-timing` header so response bodies stay
//! byte-identical across repeated queries.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tracemem_core::embed::EmbedError;
use tracemem_core::graph::snapshot;
use tracemem_core::ingest::{IngestError, IngestOptions, IngestReport};
use tracemem_core::model::{ModelError, RankedTurn, SubgraphStats, TripletEvidence};
use tracemem_core::retrieval::RetrievalError;
use tracemem_core::{Engine, EngineError, GraphStats, RetrievalConfig, SessionRecord};

pub const API_VERSION: u32 = 1;

pub struct AppState {
    pub engine: Arc<Engine>,
    /// Snapshot rewritten after every successful ingest.
    pub store: Option<PathBuf>,
    pub api_key: Option<String>,
    pub defaults: RetrievalConfig,
    save_lock: Mutex<()>,
}

impl AppState {
    pub fn new(
        engine: Arc<Engine>,
        store: Option<PathBuf>,
        api_key: Option<String>,
        defaults: RetrievalConfig,
    ) -> Self {
        Self {
            engine,
            store,
            api_key,
            defaults,
            save_lock: Mutex::new(()),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/sessions", post(ingest_session))
        .route("/v1/query", post(query))
        .route("/v1/health", get(health))
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    path: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            path: None,
        }
    }

    fn at(mut self, path: impl Into<String>) -> Self {
        self.path = Some(path.into());
        self
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body =
            serde_json::json!({ "error": ErrorBody { code: self.code, message: self.message, path: self.path } });
        (self.status, Json(body)).into_response()
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        let err = ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", e.to_string());
        match e {
            ModelError::Invalid { field, .. } => err.at(field),
            ModelError::InvalidName(_) => err,
        }
    }
}

fn embed_error(e: EmbedError) -> ApiError {
    match e {
        EmbedError::ProviderUnavailable(_) => {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "embedder_unavailable", e.to_string())
        }
        _ => ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", e.to_string()),
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Ingest(IngestError::InvalidInput(m)) => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", m)
            }
            EngineError::Ingest(IngestError::DuplicateSession(id)) => ApiError::new(
                StatusCode::CONFLICT,
                "duplicate_session",
                format!("session {id} is already ingested"),
            )
            .at("session_id"),
            EngineError::Ingest(IngestError::Embed(e)) | EngineError::Retrieval(RetrievalError::Embed(e)) => {
                embed_error(e)
            }
            EngineError::Retrieval(RetrievalError::EmptyGraph) => {
                ApiError::new(StatusCode::CONFLICT, "empty_graph", "no sessions have been ingested")
            }
            EngineError::Retrieval(RetrievalError::Config(m)) => m.into(),
            EngineError::Answer(e) => ApiError::new(StatusCode::BAD_GATEWAY, "generation_failed", e.to_string()),
            other => ApiError::internal(other),
        }
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let err = ApiError::new(StatusCode::BAD_REQUEST, "invalid_json", e.inner().to_string());
        if path == "." {
            err
        } else {
            err.at(path)
        }
    })
}

fn authorize(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(key) = &state.api_key else { return Ok(()) };
    let bearer = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let plain = headers.get("x-api-key").and_then(|v| v.to_str().ok());
    if bearer == Some(key.as_str()) || plain == Some(key.as_str()) {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or wrong API key",
        ))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn ingest_session(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<IngestReport>), ApiError> {
    authorize(&state, &headers)?;
    let record: SessionRecord = parse(&body)?;
    // Checked here as well as in the pipeline so the caller gets a field path.
    record.to_turns()?;
    let report = blocking(move || {
        let report = state.engine.ingest(&record, IngestOptions::default())?;
        if let Some(path) = &state.store {
            let _guard = state.save_lock.lock().unwrap_or_else(|p| p.into_inner());
            snapshot::save(&state.engine.graph(), path)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "persist_failed", e.to_string()))?;
        }
        Ok(report)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(report)))
}

/// Per-request overrides of the server's retrieval defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub damping: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub k_seed: Option<usize>,
    pub top_m_turns: Option<usize>,
    pub weight_floor: Option<f64>,
    pub uniform_weights: Option<bool>,
    pub full_graph: Option<bool>,
    pub disable_triplet_enrichment: Option<bool>,
    pub disable_selective_filter: Option<bool>,
}

impl ConfigOverrides {
    pub fn apply(&self, base: &RetrievalConfig) -> RetrievalConfig {
        let mut c = base.clone();
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            damping,
            tolerance,
            max_iterations,
            k_seed,
            top_m_turns,
            weight_floor,
            uniform_weights,
            full_graph,
            disable_triplet_enrichment,
            disable_selective_filter
        );
        c
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub query: String,
    #[serde(default)]
    pub config: ConfigOverrides,
    #[serde(default)]
    pub generate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub api_version: u32,
    pub ranked_turns: Vec<RankedTurn>,
    pub triplets: Vec<TripletEvidence>,
    pub subgraph_stats: SubgraphStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

async fn query(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    authorize(&state, &headers)?;
    let req: QueryRequest = parse(&body)?;
    if req.query.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", "empty query").at("query"));
    }
    let cfg = req.config.apply(&state.defaults);
    cfg.validate()?;
    let (resp, pagerank_ms) = blocking(move || {
        let outcome = state.engine.retrieve(&req.query, &cfg)?;
        let answer = if req.generate {
            Some(state.engine.answer(&req.query, &outcome.bundle)?)
        } else {
            None
        };
        let b = outcome.bundle;
        let resp = QueryResponse {
            api_version: API_VERSION,
            ranked_turns: b.ranked_turns,
            triplets: b.triplets,
            subgraph_stats: b.subgraph_stats,
            answer,
        };
        Ok((resp, outcome.pagerank_ms))
    })
    .await?;
    let mut response = Json(resp).into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("pagerank;dur={pagerank_ms:.3}")) {
        response.headers_mut().insert("server-timing", v);
    }
    Ok(response)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub api_version: u32,
    pub embedding_dim: usize,
    pub graph: GraphStats,
    pub provider_reachable: bool,
    pub llm_error_rate: f64,
}

async fn health(State(state): State<Arc<AppState>>) -> Result<Json<Health>, ApiError> {
    blocking(move || {
        let e = &state.engine;
        Ok(Json(Health {
            status: "ok".into(),
            api_version: API_VERSION,
            embedding_dim: e.embedder().dim(),
            graph: e.stats(),
            provider_reachable: e.gateway().provider_reachable(),
            llm_error_rate: e.gateway().error_rate(),
        }))
    })
    .await
}

/// Binds and serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
