#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use curio_agent::lvlm::{LvlmGateway, LvlmResponse};
use curio_agent::stub::ScriptedStub;
use curio_agent::tools::{Scope, Toolbox};
use curio_core::embedding::{Embedder, ImageData, StubEmbedder};
use curio_core::fixture::generate_fixture;
use curio_core::ingest::{ingest, IngestConfig};
use curio_core::store::Corpus;

pub const DIM: usize = 64;
pub const MODEL: &str = "scripted";

pub struct TestCorpus {
    pub dir: tempfile::TempDir,
    pub corpus: Arc<Corpus>,
}

pub async fn corpus_with(embedder: &dyn Embedder, seed: u64, n_collections: usize, n_records: usize) -> TestCorpus {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_fixture(seed, n_collections, n_records)
        .unwrap()
        .write(&dir.path().join("src"))
        .unwrap();
    let out = dir.path().join("store");
    ingest(&manifest, &out, embedder, &IngestConfig::default()).await.unwrap();
    let corpus = Arc::new(Corpus::open(&out).unwrap());
    TestCorpus { dir, corpus }
}

pub async fn corpus(seed: u64, n_collections: usize, n_records: usize) -> TestCorpus {
    corpus_with(&StubEmbedder::new(DIM), seed, n_collections, n_records).await
}

pub fn scripted(responses: Vec<LvlmResponse>) -> (Arc<ScriptedStub>, Arc<LvlmGateway>) {
    let stub = Arc::new(ScriptedStub::new(responses));
    let gateway = LvlmGateway::new(vec![(MODEL.into(), "Scripted".into(), stub.clone() as _)]).unwrap();
    (stub, Arc::new(gateway))
}

pub fn script_json(json: &str) -> (Arc<ScriptedStub>, Arc<LvlmGateway>) {
    let stub = Arc::new(ScriptedStub::from_json(json).unwrap());
    let gateway = LvlmGateway::new(vec![(MODEL.into(), "Scripted".into(), stub.clone() as _)]).unwrap();
    (stub, Arc::new(gateway))
}

pub fn toolbox(corpus: &Arc<Corpus>, gateway: Arc<LvlmGateway>) -> Toolbox {
    Toolbox::new(corpus.clone(), Arc::new(StubEmbedder::new(DIM)), gateway)
}

pub fn no_uploads() -> &'static BTreeMap<String, ImageData> {
    static EMPTY: std::sync::OnceLock<BTreeMap<String, ImageData>> = std::sync::OnceLock::new();
    EMPTY.get_or_init(BTreeMap::new)
}

pub fn scope() -> Scope<'static> {
    Scope {
        model: MODEL,
        uploads: no_uploads(),
    }
}
