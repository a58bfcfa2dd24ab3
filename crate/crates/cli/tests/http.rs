use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use tracemem_cli::server::{router, AppState, QueryResponse};
use tracemem_core::embed::{EmbedError, Embedder, Embedding, HashEmbedder};
use tracemem_core::llm::offline::OfflineProvider;
use tracemem_core::llm::{ChatProvider, CompletionResult, PromptInstance, ProviderError, RetryPolicy, TemplateId};
use tracemem_core::{Engine, LlmGateway, RetrievalConfig};

/// Offline provider that is down for answer generation only.
struct NoAnswers(OfflineProvider);

impl ChatProvider for NoAnswers {
    fn complete(&self, prompt: &PromptInstance, temperature: f64) -> Result<CompletionResult, ProviderError> {
        if prompt.template_id == TemplateId::AnswerGeneration {
            return Err(ProviderError::Unavailable("connection refused".into()));
        }
        self.0.complete(prompt, temperature)
    }
}

struct DownEmbedder;

impl Embedder for DownEmbedder {
    fn dim(&self) -> usize {
        8
    }

    fn embed(&self, _: &str) -> Result<Embedding, EmbedError> {
        Err(EmbedError::ProviderUnavailable("connection refused".into()))
    }
}

fn gateway(provider: Arc<dyn ChatProvider>) -> Arc<LlmGateway> {
    Arc::new(LlmGateway::with_retry(
        provider,
        RetryPolicy {
            attempts: 1,
            base_delay: std::time::Duration::ZERO,
        },
    ))
}

fn state_with(provider: Arc<dyn ChatProvider>, embedder: Arc<dyn Embedder>, key: Option<&str>) -> Arc<AppState> {
    let engine = Arc::new(Engine::new(gateway(provider), embedder));
    Arc::new(AppState::new(
        engine,
        None,
        key.map(String::from),
        RetrievalConfig::default(),
    ))
}

fn state() -> Arc<AppState> {
    state_with(
        Arc::new(OfflineProvider::new()),
        Arc::new(HashEmbedder::default()),
        None,
    )
}

fn session(id: &str) -> Value {
    json!({
        "session_id": id,
        "date": "2024-03-02",
        "turns": [
            {"speaker": "Maya", "text": "I adopted a border collie named Pixel."},
            {"speaker": "Theo", "text": "What does Pixel like to do?"},
            {"speaker": "Maya", "text": "I play frisbee with her in the park every morning."},
            {"speaker": "Theo", "text": "By the way, how is the new job?"},
            {"speaker": "Maya", "text": "I work at the Lindqvist bakery in Oslo now."}
        ]
    })
}

async fn call(
    state: &Arc<AppState>,
    method: &str,
    uri: &str,
    body: Option<Value>,
    key: Option<&str>,
) -> (StatusCode, Value, axum::http::HeaderMap) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header("authorization", format!("Bearer {k}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v, headers)
}

async fn raw_query(state: &Arc<AppState>, body: Value) -> Vec<u8> {
    let req = Request::post("/v1/query")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    resp.into_body().collect().await.unwrap().to_bytes().to_vec()
}

#[tokio::test]
async fn ingest_returns_202_with_a_report() {
    let st = state();
    let (status, body, _) = call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    assert_eq!(body["session_id"], "s1");
    assert_eq!(body["turn_count"], 5);
    assert_eq!(body["segment_count"], 2);
    assert_eq!(st.engine.stats().turns as u64, body["retained_count"].as_u64().unwrap());
}

#[tokio::test]
async fn malformed_sessions_get_400_with_a_field_path() {
    let st = state();
    let mut bad = session("s1");
    bad["turns"][1]["speaker"] = json!(7);
    let (status, body, _) = call(&st, "POST", "/v1/sessions", Some(bad), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid_json");
    assert_eq!(body["error"]["path"], "turns[1].speaker");

    let (status, body, _) = call(
        &st,
        "POST",
        "/v1/sessions",
        Some(json!({"session_id": "s", "turns": []})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["path"], "session.turns");

    let mut extra = session("s1");
    extra["mood"] = json!("happy");
    let (status, body, _) = call(&st, "POST", "/v1/sessions", Some(extra), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("mood"));
    assert_eq!(st.engine.stats().turns, 0);
}

#[tokio::test]
async fn duplicate_sessions_conflict() {
    let st = state();
    assert_eq!(
        call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await.0,
        StatusCode::ACCEPTED
    );
    let before = st.engine.stats();
    let (status, body, _) = call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "duplicate_session");
    assert_eq!(st.engine.stats(), before);
}

#[tokio::test]
async fn embedder_outage_is_503_and_leaves_the_graph_alone() {
    let st = state_with(Arc::new(OfflineProvider::new()), Arc::new(DownEmbedder), None);
    let (status, body, _) = call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "embedder_unavailable");
    assert_eq!(st.engine.stats().turns, 0);
}

#[tokio::test]
async fn query_on_an_empty_graph_conflicts() {
    let (status, body, _) = call(&state(), "POST", "/v1/query", Some(json!({"query": "Pixel"})), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "empty_graph");
}

#[tokio::test]
async fn query_returns_evidence_and_answers_only_on_request() {
    let st = state();
    call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await;

    let (status, body, headers) = call(
        &st,
        "POST",
        "/v1/query",
        Some(json!({"query": "Where does Maya work?"})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: QueryResponse = serde_json::from_value(body.clone()).unwrap();
    assert_eq!(resp.api_version, 1);
    assert!(resp.answer.is_none());
    assert!(body.get("answer").is_none());
    assert_eq!(resp.ranked_turns[0].turn.turn_id, 4);
    assert!(resp.triplets.iter().any(|t| t.relation == "works at"));
    assert!(resp.ranked_turns.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(headers["server-timing"].to_str().unwrap().starts_with("pagerank;dur="));

    let (status, body, _) = call(
        &st,
        "POST",
        "/v1/query",
        Some(json!({"query": "Where does Maya work?", "generate": true})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["answer"].as_str().unwrap().contains("Lindqvist"), "{body}");
}

#[tokio::test]
async fn repeated_queries_are_byte_identical() {
    let st = state();
    call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await;
    let q = json!({"query": "What does Pixel like to do?", "config": {"uniform_weights": true}});
    let a = raw_query(&st, q.clone()).await;
    let b = raw_query(&st, q).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn config_overrides_are_validated() {
    let st = state();
    call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await;
    let (status, body, _) = call(
        &st,
        "POST",
        "/v1/query",
        Some(json!({"query": "x", "config": {"damping": 1.5}})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["path"], "config.damping");

    let (status, body, _) = call(
        &st,
        "POST",
        "/v1/query",
        Some(json!({"query": "x", "config": {"dampng": 0.5}})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["path"], "config.dampng");

    let (status, body, _) = call(&st, "POST", "/v1/query", Some(json!({"query": "   "})), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["path"], "query");

    let (status, body, _) = call(
        &st,
        "POST",
        "/v1/query",
        Some(json!({"query": "Pixel", "config": {"top_m_turns": 1}})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["ranked_turns"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn generation_outage_is_502() {
    let st = state_with(
        Arc::new(NoAnswers(OfflineProvider::new())),
        Arc::new(HashEmbedder::default()),
        None,
    );
    assert_eq!(
        call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await.0,
        StatusCode::ACCEPTED
    );
    let (status, body, _) = call(
        &st,
        "POST",
        "/v1/query",
        Some(json!({"query": "Pixel", "generate": true})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"]["code"], "generation_failed");
    let (status, _, _) = call(&st, "POST", "/v1/query", Some(json!({"query": "Pixel"})), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn health_reports_stats_and_provider() {
    let st = state();
    call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await;
    let (status, body, _) = call(&st, "GET", "/v1/health", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["embedding_dim"], 384);
    assert_eq!(body["provider_reachable"], true);
    assert_eq!(body["llm_error_rate"], 0.0);
    assert!(body["graph"]["turns"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn api_key_guards_post_routes() {
    let st = state_with(
        Arc::new(OfflineProvider::new()),
        Arc::new(HashEmbedder::default()),
        Some("sesame"),
    );
    let (status, body, _) = call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"]["code"], "unauthorized");
    assert_eq!(
        call(&st, "POST", "/v1/sessions", Some(session("s1")), Some("wrong"))
            .await
            .0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        call(&st, "POST", "/v1/sessions", Some(session("s1")), Some("sesame"))
            .await
            .0,
        StatusCode::ACCEPTED
    );
    assert_eq!(
        call(&st, "POST", "/v1/query", Some(json!({"query": "Pixel"})), None)
            .await
            .0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(call(&st, "GET", "/v1/health", None, None).await.0, StatusCode::OK);
}

#[tokio::test]
async fn ingest_persists_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.memgraph.json");
    let engine = Arc::new(Engine::new(
        gateway(Arc::new(OfflineProvider::new())),
        Arc::new(HashEmbedder::default()),
    ));
    let st = Arc::new(AppState::new(
        engine.clone(),
        Some(path.clone()),
        None,
        RetrievalConfig::default(),
    ));
    call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await;
    let saved = tracemem_core::graph::snapshot::load(&path).unwrap();
    assert_eq!(saved, *engine.graph());
}

/// Offline provider that parks the first segmentation call mentioning
/// `needle` until released.
struct Gate {
    inner: OfflineProvider,
    needle: &'static str,
    started: std::sync::Mutex<Option<std::sync::mpsc::Sender<()>>>,
    release: std::sync::Mutex<std::sync::mpsc::Receiver<()>>,
}

impl ChatProvider for Gate {
    fn complete(&self, prompt: &PromptInstance, temperature: f64) -> Result<CompletionResult, ProviderError> {
        if prompt.template_id == TemplateId::Segmentation && prompt.rendered_text.contains(self.needle) {
            if let Some(tx) = self.started.lock().unwrap().take() {
                tx.send(()).unwrap();
                self.release.lock().unwrap().recv().unwrap();
            }
        }
        self.inner.complete(prompt, temperature)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn queries_during_an_ingest_see_the_last_commit() {
    let (started_tx, started_rx) = std::sync::mpsc::channel();
    let (release_tx, release_rx) = std::sync::mpsc::channel();
    let gate = Gate {
        inner: OfflineProvider::new(),
        needle: "Kyoto",
        started: std::sync::Mutex::new(Some(started_tx)),
        release: std::sync::Mutex::new(release_rx),
    };
    let st = state_with(Arc::new(gate), Arc::new(HashEmbedder::default()), None);
    call(&st, "POST", "/v1/sessions", Some(session("s1")), None).await;
    let committed = st.engine.stats();

    let s2 = json!({"session_id": "s2", "turns": [
        {"speaker": "Maya", "text": "I plan to visit Kyoto in October."},
        {"speaker": "Theo", "text": "Who looks after Pixel then?"},
        {"speaker": "Maya", "text": "My neighbor Arjun will take care of Pixel."}
    ]});
    let st2 = st.clone();
    let ingest = tokio::spawn(async move { call(&st2, "POST", "/v1/sessions", Some(s2), None).await });
    tokio::task::spawn_blocking(move || started_rx.recv().unwrap())
        .await
        .unwrap();

    // The s2 ingest is parked inside extraction.
    let (status, body, _) = call(
        &st,
        "POST",
        "/v1/query",
        Some(json!({"query": "Kyoto trip Arjun"})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["ranked_turns"]
        .as_array()
        .unwrap()
        .iter()
        .all(|t| t["turn"]["session_id"] == "s1"));
    let (_, health, _) = call(&st, "GET", "/v1/health", None, None).await;
    assert_eq!(health["graph"]["turns"], committed.turns);

    release_tx.send(()).unwrap();
    let (status, _, _) = ingest.await.unwrap();
    assert_eq!(status, StatusCode::ACCEPTED);
    let (_, body, _) = call(
        &st,
        "POST",
        "/v1/query",
        Some(json!({"query": "Kyoto trip Arjun"})),
        None,
    )
    .await;
    assert_eq!(body["ranked_turns"][0]["turn"]["session_id"], "s2");
}
