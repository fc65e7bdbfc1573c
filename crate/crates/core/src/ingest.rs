//! Batch pipeline: manifest → validation → embeddings → indexes → store.
//!
//! Entries that fail validation are rejected individually and the run goes
//! on. An embedding provider failure aborts the run and deletes everything
//! written so far. The store is assembled in a sibling temporary directory and
//! swapped into place only when complete, so a reader never sees a partial
//! store.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bm25::{Bm25Error, Bm25Index, Bm25Params, DocKind, LexicalDoc};
use crate::domain::{
    derive_title, validate_collection, validate_record, CollectionDescriptor, CorpusState, EmbeddingVector,
    RecordDescriptor, Violation,
};
use crate::embedding::{EmbedError, Embedder, ImageData, MediaType};
use crate::hnsw::{HnswError, HnswIndex, HnswParams};
use crate::manifest::{CorpusManifest, ManifestError};
use crate::snapshot::{self, SnapshotError};
use crate::store::{
    self, StoreLock, VectorField, BM25_FILE, COLLECTIONS_FILE, IMAGES_DIR, LOCK_FILE, RECORDS_FILE,
    STORE_FORMAT_VERSION,
};

pub const DEFAULT_TEXT_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub hnsw: HnswParams,
    pub bm25: Bm25Params,
    /// Texts per embedding provider call.
    pub text_batch: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            hnsw: HnswParams::default(),
            bm25: Bm25Params::default(),
            text_batch: DEFAULT_TEXT_BATCH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Collection,
    Record,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub kind: EntryKind,
    pub line: usize,
    /// `collection_name` for collections, `collection_name/catalogno/image_name` for records.
    pub key: String,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub input: usize,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub store: PathBuf,
    pub collections: KindCounts,
    pub records: KindCounts,
    /// Accepted records whose image could not be embedded (unreadable,
    /// undecodable type, or over the provider's size limit). They stay
    /// searchable by title.
    pub images_skipped: Vec<String>,
    pub index_sizes: BTreeMap<String, usize>,
    pub build_millis: BTreeMap<String, u64>,
    pub rejected: Vec<Rejection>,
    pub checksums: BTreeMap<String, String>,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "ingested {} collections and {} records into {} ({} rejected)",
            self.collections.accepted,
            self.records.accepted,
            self.store.display(),
            self.collections.rejected + self.records.rejected
        )?;
        for (file, size) in &self.index_sizes {
            let ms = self.build_millis.get(file).copied().unwrap_or_default();
            writeln!(f, "  {file:<16} {size:>8} entries  {ms:>6} ms")?;
        }
        for r in &self.rejected {
            let reasons: Vec<String> = r.violations.iter().map(|v| v.to_string()).collect();
            writeln!(f, "  rejected line {} {:?} {}: {}", r.line, r.kind, r.key, reasons.join("; "))?;
        }
        for name in &self.images_skipped {
            writeln!(f, "  image not embedded: {name}")?;
        }
        for (file, sum) in &self.checksums {
            writeln!(f, "  sha256 {sum}  {file}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("manifest not found: {0}")]
    ManifestNotFound(PathBuf),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("embedding provider failed: {0}")]
    Embedding(#[from] EmbedError),
    #[error("refusing to replace {0}: not a store directory")]
    NotAStore(PathBuf),
    #[error(transparent)]
    Hnsw(#[from] HnswError),
    #[error(transparent)]
    Bm25(#[from] Bm25Error),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("invalid ingest config: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Validation outcome: accepted entities plus rejections, no I/O beyond
/// checking that image files exist.
#[derive(Debug, Clone, Default)]
pub struct Validated {
    pub collections: Vec<CollectionDescriptor>,
    pub records: Vec<RecordDescriptor>,
    pub rejected: Vec<Rejection>,
}

/// Validates every manifest entry in file order. Collections are validated
/// first so records may reference collections declared after them.
pub fn validate_manifest(manifest: &CorpusManifest, image_root: &Path) -> Validated {
    let mut out = Validated::default();
    let mut state = CorpusState::new();
    for located in &manifest.collections {
        let candidate = located.entry.to_descriptor();
        let violations = validate_collection(&candidate, &state);
        if violations.is_empty() {
            state.insert(candidate.clone());
            out.collections.push(candidate);
        } else {
            out.rejected.push(Rejection {
                kind: EntryKind::Collection,
                line: located.line,
                key: candidate.collection_name,
                violations,
            });
        }
    }

    let mut seen_ids = HashSet::new();
    let mut groups: HashMap<i64, RecordDescriptor> = HashMap::new();
    for located in &manifest.records {
        let candidate = located.entry.to_descriptor();
        let parent = state.get(&candidate.collection_name);
        let mut violations = validate_record(&candidate, parent);
        if let Some(parent) = parent {
            if derive_title(&candidate, parent).trim().is_empty() {
                violations.push(Violation::EmptyField("title".into()));
            }
        }
        if seen_ids.contains(&candidate.murag_id) {
            violations.push(Violation::DuplicateMuragId(candidate.murag_id.to_string()));
        }
        if let Some(first) = groups.get(&candidate.fundus_id) {
            if !first.same_object_as(&candidate) {
                violations.push(Violation::InconsistentFundusGroup(candidate.fundus_id));
            }
        }
        let name_ok = !violations
            .iter()
            .any(|v| matches!(v, Violation::EmptyImageName | Violation::InvalidImageName(_)));
        if name_ok {
            if MediaType::from_file_name(&candidate.image_name).is_none() {
                violations.push(Violation::UnsupportedImageType(candidate.image_name.clone()));
            } else if !image_root.join(&candidate.image_name).is_file() {
                violations.push(Violation::MissingImage(candidate.image_name.clone()));
            }
        }
        if violations.is_empty() {
            seen_ids.insert(candidate.murag_id.clone());
            groups.entry(candidate.fundus_id).or_insert_with(|| candidate.clone());
            out.records.push(candidate);
        } else {
            out.rejected.push(Rejection {
                kind: EntryKind::Record,
                line: located.line,
                key: format!(
                    "{}/{}/{}",
                    candidate.collection_name, candidate.catalogno, candidate.image_name
                ),
                violations,
            });
        }
    }
    out
}

/// Runs the whole pipeline and replaces `out_dir` with the new store.
pub async fn ingest(
    manifest_path: &Path,
    out_dir: &Path,
    embedder: &dyn Embedder,
    config: &IngestConfig,
) -> Result<IngestReport, IngestError> {
    config.hnsw.validate()?;
    config.bm25.validate()?;
    if config.text_batch == 0 {
        return Err(IngestError::Config("text_batch must be positive".into()));
    }
    if !manifest_path.is_file() {
        return Err(IngestError::ManifestNotFound(manifest_path.to_path_buf()));
    }
    let manifest_bytes = std::fs::read(manifest_path)?;
    let manifest_text = String::from_utf8(manifest_bytes.clone()).map_err(|e| ManifestError {
        line: 0,
        message: format!("manifest is not UTF-8: {e}"),
    })?;
    let manifest = CorpusManifest::parse(&manifest_text)?;
    let image_root = manifest.resolve_image_root(manifest_path);
    check_replaceable(out_dir)?;

    let validated = validate_manifest(&manifest, &image_root);
    let staging = staging_dir(out_dir);
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(staging.join(IMAGES_DIR))?;

    let built = build(&validated, &image_root, &staging, embedder, config, &manifest_bytes).await;
    let mut report = match built {
        Ok(report) => report,
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    if let Err(e) = swap_into_place(&staging, out_dir) {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e.into());
    }

    report.store = out_dir.to_path_buf();
    report.collections = KindCounts {
        input: manifest.collections.len(),
        accepted: validated.collections.len(),
        rejected: manifest.collections.len() - validated.collections.len(),
    };
    report.records = KindCounts {
        input: manifest.records.len(),
        accepted: validated.records.len(),
        rejected: manifest.records.len() - validated.records.len(),
    };
    report.rejected = validated.rejected;
    Ok(report)
}

async fn embed_texts(
    embedder: &dyn Embedder,
    texts: &[String],
    batch: usize,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch) {
        let vectors = embedder.embed_text(chunk).await?;
        if vectors.len() != chunk.len() || vectors.iter().any(|v| v.dim() != embedder.dimension()) {
            return Err(EmbedError::MalformedResponse(
                "provider returned the wrong number or size of vectors".into(),
            ));
        }
        out.extend(vectors);
    }
    Ok(out)
}

async fn build(
    validated: &Validated,
    image_root: &Path,
    staging: &Path,
    embedder: &dyn Embedder,
    config: &IngestConfig,
    manifest_bytes: &[u8],
) -> Result<IngestReport, IngestError> {
    let dim = embedder.dimension();
    let collections = &validated.collections;
    let records = &validated.records;
    let parents: HashMap<&str, &CollectionDescriptor> =
        collections.iter().map(|c| (c.collection_name.as_str(), c)).collect();
    let record_titles: Vec<String> = records
        .iter()
        .map(|r| derive_title(r, parents[r.collection_name.as_str()]))
        .collect();
    let ctitles: Vec<String> = collections.iter().map(|c| c.title.clone()).collect();
    let cdescs: Vec<String> = collections.iter().map(|c| c.description.clone()).collect();

    let mut vectors: BTreeMap<VectorField, Vec<(usize, EmbeddingVector)>> = BTreeMap::new();
    for (field, texts) in [
        (VectorField::CollectionTitle, &ctitles),
        (VectorField::CollectionDescription, &cdescs),
        (VectorField::RecordTitle, &record_titles),
    ] {
        let embedded = embed_texts(embedder, texts, config.text_batch).await?;
        vectors.insert(field, embedded.into_iter().enumerate().collect());
    }

    let mut images = Vec::new();
    let mut images_skipped = Vec::new();
    let mut copied = HashSet::new();
    for (i, record) in records.iter().enumerate() {
        let name = &record.image_name;
        let media_type = MediaType::from_file_name(name).expect("validated image type");
        let bytes = match std::fs::read(image_root.join(name)) {
            Ok(b) => b,
            Err(e) => {
                tracing::warn!(image = %name, error = %e, "image unreadable, skipping image embedding");
                images_skipped.push(record.murag_id.to_string());
                continue;
            }
        };
        if copied.insert(name.clone()) {
            std::fs::write(staging.join(IMAGES_DIR).join(name), &bytes)?;
        }
        match embedder.embed_image(&ImageData::new(bytes, media_type)).await {
            Ok(v) if v.dim() == dim => images.push((i, v)),
            Ok(_) => {
                return Err(EmbedError::MalformedResponse("image vector has the wrong dimension".into()).into())
            }
            Err(e @ (EmbedError::OversizePayload { .. } | EmbedError::UnsupportedMediaType(_) | EmbedError::InvalidInput(_))) => {
                tracing::warn!(image = %name, error = %e, "image rejected by embedder");
                images_skipped.push(record.murag_id.to_string());
            }
            Err(e) => return Err(e.into()),
        }
    }
    vectors.insert(VectorField::RecordImage, images);

    let mut index_sizes = BTreeMap::new();
    let mut build_millis = BTreeMap::new();
    let mut artifacts: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for (field, entries) in &vectors {
        let started = Instant::now();
        let mut index = HnswIndex::new(dim, config.hnsw)?;
        for (i, v) in entries {
            let id = match field {
                VectorField::RecordImage | VectorField::RecordTitle => records[*i].murag_id.clone(),
                VectorField::CollectionTitle | VectorField::CollectionDescription => {
                    collections[*i].murag_id.clone()
                }
            };
            index.insert(id, v)?;
        }
        build_millis.insert(field.file_name().to_owned(), started.elapsed().as_millis() as u64);
        index_sizes.insert(field.file_name().to_owned(), index.len());
        artifacts.insert(field.file_name().to_owned(), index.to_bytes());
    }

    let started = Instant::now();
    let mut docs = Vec::with_capacity(records.len() + 2 * collections.len());
    for c in collections {
        docs.push(LexicalDoc::new(c.murag_id.clone(), DocKind::CollectionTitle, c.title.clone()));
        docs.push(LexicalDoc::new(
            c.murag_id.clone(),
            DocKind::CollectionDescription,
            c.description.clone(),
        ));
    }
    for (r, title) in records.iter().zip(&record_titles) {
        docs.push(LexicalDoc::new(r.murag_id.clone(), DocKind::RecordTitle, title.clone()));
    }
    let lexical = Bm25Index::build(docs, config.bm25)?;
    build_millis.insert(BM25_FILE.to_owned(), started.elapsed().as_millis() as u64);
    index_sizes.insert(BM25_FILE.to_owned(), lexical.len());
    artifacts.insert(BM25_FILE.to_owned(), lexical.to_bytes());

    let mut sorted_collections = collections.clone();
    sorted_collections.sort_by(|a, b| a.collection_name.cmp(&b.collection_name));
    artifacts.insert(COLLECTIONS_FILE.to_owned(), store::encode_collections(&sorted_collections));
    artifacts.insert(RECORDS_FILE.to_owned(), store::encode_records(records));

    let mut checksums = BTreeMap::new();
    for (file, bytes) in &artifacts {
        snapshot::write_atomic(&staging.join(file), bytes)?;
        checksums.insert(file.clone(), snapshot::sha256_hex(bytes));
    }
    let lock = StoreLock {
        format_version: STORE_FORMAT_VERSION,
        embedder: embedder.describe(),
        dimension: dim,
        hnsw: config.hnsw,
        bm25: config.bm25,
        manifest_sha256: snapshot::sha256_hex(manifest_bytes),
        artifacts: checksums.clone(),
    };
    let mut lock_bytes = serde_json::to_vec_pretty(&lock).expect("lock serializes");
    lock_bytes.push(b'\n');
    snapshot::write_atomic(&staging.join(LOCK_FILE), &lock_bytes)?;
    checksums.insert(LOCK_FILE.to_owned(), snapshot::sha256_hex(&lock_bytes));

    Ok(IngestReport {
        store: staging.to_path_buf(),
        collections: KindCounts::default(),
        records: KindCounts::default(),
        images_skipped,
        index_sizes,
        build_millis,
        rejected: Vec::new(),
        checksums,
    })
}

/// An existing output directory may only be replaced if it is empty or
/// holds a previous store.
fn check_replaceable(out_dir: &Path) -> Result<(), IngestError> {
    if !out_dir.exists() {
        return Ok(());
    }
    if !out_dir.is_dir() {
        return Err(IngestError::NotAStore(out_dir.to_path_buf()));
    }
    let empty = std::fs::read_dir(out_dir)?.next().is_none();
    if empty || out_dir.join(LOCK_FILE).is_file() {
        Ok(())
    } else {
        Err(IngestError::NotAStore(out_dir.to_path_buf()))
    }
}

fn sibling(out_dir: &Path, suffix: &str) -> PathBuf {
    let name = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "store".into());
    let parent = out_dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parent.join(format!(".{name}.{suffix}-{}", std::process::id()))
}

fn staging_dir(out_dir: &Path) -> PathBuf {
    sibling(out_dir, "partial")
}

fn swap_into_place(staging: &Path, out_dir: &Path) -> std::io::Result<()> {
    if out_dir.exists() {
        let old = sibling(out_dir, "old");
        if old.exists() {
            std::fs::remove_dir_all(&old)?;
        }
        std::fs::rename(out_dir, &old)?;
        if let Err(e) = std::fs::rename(staging, out_dir) {
            std::fs::rename(&old, out_dir)?;
            return Err(e);
        }
        std::fs::remove_dir_all(&old)
    } else {
        if let Some(parent) = out_dir.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::rename(staging, out_dir)
    }
}
