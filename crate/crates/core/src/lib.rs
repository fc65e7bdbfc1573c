pub mod bm25;
pub mod domain;
pub mod embedding;
pub mod fixture;
pub mod hnsw;
pub mod ingest;
pub mod manifest;
pub mod snapshot;
pub mod store;
