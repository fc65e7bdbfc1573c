#![allow(dead_code)]

use std::sync::Arc;

use async_trait::async_trait;
use curio_agent::agent::AgentConfig;
use curio_agent::lvlm::{GenerateRequest, LvlmError, LvlmGateway, LvlmProvider, LvlmResponse};
use curio_agent::stub::ScriptedStub;
use curio_agent::tools::Toolbox;
use curio_core::embedding::StubEmbedder;
use curio_core::fixture::generate_fixture;
use curio_core::ingest::{ingest, IngestConfig};
use curio_core::store::Corpus;
use curio_server::clock::ManualClock;
use curio_server::routes::router;
use curio_server::state::{AppState, Limits};

pub const DIM: usize = 32;
pub const TTL_MS: u64 = 60_000;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub corpus: Arc<Corpus>,
}

pub async fn fixture(seed: u64, n_collections: usize, n_records: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_fixture(seed, n_collections, n_records)
        .unwrap()
        .write(&dir.path().join("src"))
        .unwrap();
    let out = dir.path().join("store");
    ingest(&manifest, &out, &StubEmbedder::new(DIM), &IngestConfig::default())
        .await
        .unwrap();
    let corpus = Arc::new(Corpus::open(&out).unwrap());
    Fixture { dir, corpus }
}

/// Answers every request with the latest user text, prefixed.
pub struct EchoProvider;

#[async_trait]
impl LvlmProvider for EchoProvider {
    fn provider_tag(&self) -> &'static str {
        "echo"
    }
    async fn generate(&self, request: &GenerateRequest) -> Result<LvlmResponse, LvlmError> {
        tokio::task::yield_now().await;
        Ok(LvlmResponse::FinalText(format!("echo: {}", request.last_user_text().unwrap_or_default())))
    }
}

/// Blocks each request until released.
pub struct GateProvider(pub Arc<tokio::sync::Semaphore>);

#[async_trait]
impl LvlmProvider for GateProvider {
    fn provider_tag(&self) -> &'static str {
        "gate"
    }
    async fn generate(&self, _: &GenerateRequest) -> Result<LvlmResponse, LvlmError> {
        self.0.acquire().await.unwrap().forget();
        Ok(LvlmResponse::FinalText("released".into()))
    }
}

pub fn gateway(models: Vec<(&str, Arc<dyn LvlmProvider>)>) -> Arc<LvlmGateway> {
    Arc::new(
        LvlmGateway::new(models.into_iter().map(|(id, p)| (id.to_owned(), id.to_uppercase(), p)).collect()).unwrap(),
    )
}

pub fn scripted(json: &str) -> Arc<dyn LvlmProvider> {
    Arc::new(ScriptedStub::from_json(json).unwrap())
}

pub struct Server {
    pub base: String,
    pub state: Arc<AppState>,
    pub clock: Arc<ManualClock>,
    pub client: reqwest::Client,
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}/v1{path}", self.base)
    }

    pub async fn create_session(&self, model: &str) -> String {
        let res = self
            .client
            .post(self.url("/sessions"))
            .json(&serde_json::json!({ "model_id": model }))
            .send()
            .await
            .unwrap();
        assert_eq!(res.status(), 201);
        res.json::<serde_json::Value>().await.unwrap()["session_id"].as_str().unwrap().to_owned()
    }

    pub async fn say(&self, session: &str, text: &str) -> reqwest::Response {
        self.client
            .post(self.url(&format!("/sessions/{session}/messages")))
            .json(&serde_json::json!({ "text": text }))
            .send()
            .await
            .unwrap()
    }
}

pub struct Options {
    pub max_upload_bytes: usize,
    pub cors: Vec<String>,
    pub install: bool,
    pub trace_log: Option<std::path::PathBuf>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_upload_bytes: 8 * 1024 * 1024,
            cors: Vec::new(),
            install: true,
            trace_log: None,
        }
    }
}

pub async fn spawn(fixture: &Fixture, gateway: Arc<LvlmGateway>, options: Options) -> Server {
    let clock = Arc::new(ManualClock::new(1_000_000));
    let limits = Limits {
        session_ttl_ms: TTL_MS,
        max_upload_bytes: options.max_upload_bytes,
    };
    let mut state = AppState::new(gateway.clone(), AgentConfig::default(), limits, clock.clone());
    if let Some(path) = &options.trace_log {
        state = state.with_trace_log(path).unwrap();
    }
    let state = Arc::new(state);
    if options.install {
        state.install(Toolbox::new(fixture.corpus.clone(), Arc::new(StubEmbedder::new(DIM)), gateway));
    }
    let app = router(state.clone(), &options.cors);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server {
        base: format!("http://{addr}"),
        state,
        clock,
        client: reqwest::Client::new(),
    }
}
