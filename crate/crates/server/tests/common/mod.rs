//! Shared harness: a real server on an ephemeral port over a synthetic
//! corpus, plus a mock HTTP text encoder.

#![allow(dead_code)]

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde_json::{json, Value};
use tempfile::TempDir;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use vlaudit_core::EmbeddingMatrix;
use vlaudit_server::config::{Config, CorpusConfig, Defaults, ProviderConfig};
use vlaudit_server::provider::{EncodeRequest, EncodeResponse};
use vlaudit_server::AppState;
use vlaudit_testkit as kit;

pub const DIM: usize = 16;
pub const CORPUS_SIZE: usize = 200;
pub const BASELINE: &str = "A photo of a person";
pub const AUGMENTED: &str = "A photo of a CEO";
pub const SEARCH: &str = "glasses";

pub fn fixed_time() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2024-03-01T09:30:00Z")
        .unwrap()
        .with_timezone(&Utc)
}

/// Seeded clustered corpus; identical for identical seeds.
pub fn corpus(seed: u64) -> EmbeddingMatrix {
    let mut rng = kit::rng(seed);
    let rows = kit::clustered_rows(&mut rng, CORPUS_SIZE, DIM, 6, 0.08);
    kit::matrix_from_rows(kit::ids(CORPUS_SIZE), &rows)
}

/// Caption vectors served by both the fixture and the mock provider.
pub fn captions(seed: u64) -> HashMap<String, Vec<f32>> {
    let mut rng = kit::rng(seed ^ 0xC0FFEE);
    [BASELINE, AUGMENTED, SEARCH, "a red hat", "outdoors"]
        .into_iter()
        .map(|t| (t.to_string(), kit::random_unit(&mut rng, DIM)))
        .collect()
}

pub fn config(dir: &TempDir, provider: ProviderConfig) -> Config {
    Config {
        bind: "127.0.0.1:0".parse().unwrap(),
        corpus: CorpusConfig {
            vlsl: dir.path().join("corpus.vlsl"),
            manifest: dir.path().join("manifest.jsonl"),
        },
        provider,
        defaults: Defaults::default(),
        fixed_time: Some(fixed_time()),
    }
}

pub struct TestServer {
    pub base: String,
    pub client: reqwest::Client,
    pub dir: TempDir,
    shutdown: Option<oneshot::Sender<()>>,
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Writes the corpus and fixture provider to disk and serves them exactly
/// as `vlaudit serve` would.
pub async fn fixture_server(seed: u64) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    kit::write_corpus(dir.path(), corpus(seed));
    let fixture = dir.path().join("captions.json");
    std::fs::write(&fixture, serde_json::to_string(&captions(seed)).unwrap()).unwrap();
    let config = config(
        &dir,
        ProviderConfig {
            endpoint: None,
            fixture: Some(fixture),
            timeout_ms: 1000,
        },
    );
    start(dir, &config).await
}

pub async fn http_server(seed: u64, endpoint: &str, timeout_ms: u64) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    kit::write_corpus(dir.path(), corpus(seed));
    let config = config(
        &dir,
        ProviderConfig {
            endpoint: Some(endpoint.to_string()),
            fixture: None,
            timeout_ms,
        },
    );
    start(dir, &config).await
}

async fn start(dir: TempDir, config: &Config) -> TestServer {
    config.validate().unwrap();
    let state = Arc::new(AppState::from_config(config).unwrap());
    let listener = TcpListener::bind(config.bind).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel::<()>();
    tokio::spawn(vlaudit_server::serve(listener, state, async {
        let _ = rx.await;
    }));
    TestServer {
        base: format!("http://{addr}"),
        client: reqwest::Client::new(),
        dir,
        shutdown: Some(tx),
    }
}

impl TestServer {
    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        decode(r).await
    }

    pub async fn get_text(&self, path: &str) -> (StatusCode, String) {
        let r = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        let status = StatusCode::from_u16(r.status().as_u16()).unwrap();
        (status, r.text().await.unwrap())
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        decode(r).await
    }

    pub async fn patch(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .client
            .patch(format!("{}{path}", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        decode(r).await
    }

    pub async fn create_session(&self, k: usize) -> Value {
        let (status, body) = self
            .post(
                "/sessions",
                json!({ "baseline": BASELINE, "augmented": AUGMENTED, "k": k }),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body
    }
}

async fn decode(r: reqwest::Response) -> (StatusCode, Value) {
    let status = StatusCode::from_u16(r.status().as_u16()).unwrap();
    let text = r.text().await.unwrap();
    let value =
        serde_json::from_str(&text).unwrap_or_else(|e| panic!("non-JSON body {text:?}: {e}"));
    (status, value)
}

/// Mock `/encode` endpoint that can be taken down or slowed at runtime.
pub struct MockProvider {
    pub endpoint: String,
    pub up: Arc<AtomicBool>,
    pub delay_ms: Arc<AtomicU64>,
    pub calls: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl Drop for MockProvider {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

#[derive(Clone)]
struct MockState {
    vectors: Arc<HashMap<String, Vec<f32>>>,
    up: Arc<AtomicBool>,
    delay_ms: Arc<AtomicU64>,
    calls: Arc<AtomicUsize>,
}

async fn encode(
    State(s): State<MockState>,
    Json(req): Json<EncodeRequest>,
) -> Result<Json<EncodeResponse>, StatusCode> {
    s.calls.fetch_add(1, Ordering::SeqCst);
    let delay = s.delay_ms.load(Ordering::SeqCst);
    if delay > 0 {
        tokio::time::sleep(Duration::from_millis(delay)).await;
    }
    if !s.up.load(Ordering::SeqCst) {
        return Err(StatusCode::SERVICE_UNAVAILABLE);
    }
    let embeddings = req
        .texts
        .iter()
        .map(|t| {
            s.vectors
                .get(t)
                .cloned()
                .ok_or(StatusCode::UNPROCESSABLE_ENTITY)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Json(EncodeResponse {
        dim: DIM,
        embeddings,
    }))
}

pub async fn mock_provider(seed: u64) -> MockProvider {
    let state = MockState {
        vectors: Arc::new(captions(seed)),
        up: Arc::new(AtomicBool::new(true)),
        delay_ms: Arc::new(AtomicU64::new(0)),
        calls: Arc::new(AtomicUsize::new(0)),
    };
    let app = Router::new()
        .route("/encode", post(encode))
        .with_state(state.clone());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel::<()>();
    tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
            .unwrap();
    });
    MockProvider {
        endpoint: format!("http://{addr}"),
        up: state.up,
        delay_ms: state.delay_ms,
        calls: state.calls,
        shutdown: Some(tx),
    }
}

/// All member ids across `clusters` (a session summary's `clusters` array).
pub fn cluster_members(clusters: &Value) -> Vec<String> {
    clusters
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|c| c["image_ids"].as_array().unwrap().iter())
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}

pub async fn scripted_session(server: &TestServer) -> String {
    scripted(server).await.1
}

/// Scripted exploration: create, search, build a slice, recommend,
/// correlate, snapshot. Returns the session id and snapshot body.
pub async fn scripted(server: &TestServer) -> (String, String) {
    let summary = server.create_session(60).await;
    let sid = summary["session_id"].as_str().unwrap().to_string();

    let (status, search) = server
        .post(
            &format!("/sessions/{sid}/clusters/search"),
            json!({ "text": SEARCH }),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{search}");
    let top = search["ordering"][0].as_u64().unwrap() as usize;
    let top_ids = summary["clusters"][top]["image_ids"].clone();

    let (status, slice) = server
        .post(
            &format!("/sessions/{sid}/slices"),
            json!({ "name": "glasses wearers", "image_ids": top_ids }),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{slice}");
    let slice_id = slice["slice_id"].as_str().unwrap().to_string();

    let (status, similar) = server
        .get(&format!("/slices/{slice_id}/recommendations?kind=similar"))
        .await;
    assert_eq!(status, StatusCode::OK, "{similar}");
    if let Some(first) = similar["clusters"].as_array().unwrap().first() {
        let cid = first["cluster_id"].as_u64().unwrap() as usize;
        let add = summary["clusters"][cid]["image_ids"].clone();
        let (status, body) = server
            .patch(&format!("/slices/{slice_id}"), json!({ "add": add }))
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
    }
    let (status, body) = server
        .get(&format!(
            "/slices/{slice_id}/recommendations?kind=counterfactual"
        ))
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (status, body) = server.get(&format!("/slices/{slice_id}/correlation")).await;
    assert_eq!(status, StatusCode::OK, "{body}");

    let (status, snapshot) = server.get_text(&format!("/sessions/{sid}/snapshot")).await;
    assert_eq!(status, StatusCode::OK, "{snapshot}");
    (sid, snapshot)
}
