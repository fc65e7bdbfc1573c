//! On-disk store produced by ingest and served read-only afterwards.
//!
//! ```text
//! store/
//!   records.db          framed JSON array of RecordDescriptor (ingest order)
//!   collections.db      framed JSON array of CollectionDescriptor (by name)
//!   hnsw_image.idx      record images
//!   hnsw_rtitle.idx     record titles
//!   hnsw_ctitle.idx     collection titles
//!   hnsw_cdesc.idx      collection descriptions
//!   bm25.idx            lexical index
//!   manifest.lock       JSON: format version, embedder, parameters, and the
//!                       SHA-256 of every file above
//!   images/             record images, by image_name
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bm25::{Bm25Error, Bm25Index, Bm25Params};
use crate::domain::{derive_title, is_plain_file_name, CollectionDescriptor, MuragId, RecordDescriptor};
use crate::embedding::{ImageData, MediaType};
use crate::hnsw::{HnswError, HnswIndex, HnswParams};
use crate::snapshot::{self, SnapshotError};

pub const RECORDS_FILE: &str = "records.db";
pub const COLLECTIONS_FILE: &str = "collections.db";
pub const BM25_FILE: &str = "bm25.idx";
pub const LOCK_FILE: &str = "manifest.lock";
pub const IMAGES_DIR: &str = "images";
pub const STORE_FORMAT_VERSION: u32 = 1;

const RECORDS_MAGIC: &[u8; 8] = b"CURRECS\0";
const COLLECTIONS_MAGIC: &[u8; 8] = b"CURCOLS\0";

/// The four embedded fields, one HNSW index each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorField {
    RecordImage,
    RecordTitle,
    CollectionTitle,
    CollectionDescription,
}

impl VectorField {
    pub const ALL: [VectorField; 4] = [
        VectorField::RecordImage,
        VectorField::RecordTitle,
        VectorField::CollectionTitle,
        VectorField::CollectionDescription,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            VectorField::RecordImage => "hnsw_image.idx",
            VectorField::RecordTitle => "hnsw_rtitle.idx",
            VectorField::CollectionTitle => "hnsw_ctitle.idx",
            VectorField::CollectionDescription => "hnsw_cdesc.idx",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            VectorField::RecordImage => "image",
            VectorField::RecordTitle => "rtitle",
            VectorField::CollectionTitle => "ctitle",
            VectorField::CollectionDescription => "cdesc",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.short_name() == s)
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_records: usize,
    pub total_collections: usize,
    pub records_per_collection: BTreeMap<String, usize>,
}

/// Contents of `manifest.lock`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreLock {
    pub format_version: u32,
    pub embedder: String,
    pub dimension: usize,
    pub hnsw: HnswParams,
    pub bm25: Bm25Params,
    pub manifest_sha256: String,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store not found at {0}")]
    NotFound(PathBuf),
    #[error("store lock is invalid: {0}")]
    InvalidLock(String),
    #[error("artifact {file} checksum mismatch")]
    ChecksumMismatch { file: String },
    #[error("store data is inconsistent: {0}")]
    Inconsistent(String),
    #[error("image {0} not found")]
    ImageNotFound(String),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Hnsw(#[from] HnswError),
    #[error(transparent)]
    Bm25(#[from] Bm25Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn encode_records(records: &[RecordDescriptor]) -> Vec<u8> {
    let body = serde_json::to_vec(records).expect("records serialize");
    snapshot::encode_frame(RECORDS_MAGIC, STORE_FORMAT_VERSION, &body)
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<RecordDescriptor>, SnapshotError> {
    let body = snapshot::decode_frame(RECORDS_MAGIC, STORE_FORMAT_VERSION, bytes)?;
    serde_json::from_slice(body).map_err(|e| SnapshotError::corrupt(e.to_string()))
}

pub fn encode_collections(collections: &[CollectionDescriptor]) -> Vec<u8> {
    let body = serde_json::to_vec(collections).expect("collections serialize");
    snapshot::encode_frame(COLLECTIONS_MAGIC, STORE_FORMAT_VERSION, &body)
}

pub fn decode_collections(bytes: &[u8]) -> Result<Vec<CollectionDescriptor>, SnapshotError> {
    let body = snapshot::decode_frame(COLLECTIONS_MAGIC, STORE_FORMAT_VERSION, bytes)?;
    serde_json::from_slice(body).map_err(|e| SnapshotError::corrupt(e.to_string()))
}

/// Records and collections with id lookups. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct Store {
    image_dir: PathBuf,
    collections: Vec<CollectionDescriptor>,
    collection_by_name: HashMap<String, usize>,
    collection_by_id: HashMap<MuragId, usize>,
    records: Vec<RecordDescriptor>,
    record_by_id: HashMap<MuragId, usize>,
}

impl Store {
    /// Builds lookups; collections are sorted by name. Fails on duplicate ids
    /// or names and on records whose collection is missing.
    pub fn new(
        mut collections: Vec<CollectionDescriptor>,
        records: Vec<RecordDescriptor>,
        image_dir: PathBuf,
    ) -> Result<Self, StoreError> {
        collections.sort_by(|a, b| a.collection_name.cmp(&b.collection_name));
        let mut store = Store {
            image_dir,
            ..Default::default()
        };
        for (i, c) in collections.iter().enumerate() {
            if store.collection_by_name.insert(c.collection_name.clone(), i).is_some()
                || store.collection_by_id.insert(c.murag_id.clone(), i).is_some()
            {
                return Err(StoreError::Inconsistent(format!(
                    "duplicate collection {}",
                    c.collection_name
                )));
            }
        }
        for (i, r) in records.iter().enumerate() {
            if !store.collection_by_name.contains_key(&r.collection_name) {
                return Err(StoreError::Inconsistent(format!(
                    "record {} references unknown collection {}",
                    r.murag_id, r.collection_name
                )));
            }
            if store.collection_by_id.contains_key(&r.murag_id)
                || store.record_by_id.insert(r.murag_id.clone(), i).is_some()
            {
                return Err(StoreError::Inconsistent(format!("duplicate murag_id {}", r.murag_id)));
            }
        }
        store.collections = collections;
        store.records = records;
        Ok(store)
    }

    pub fn get_record(&self, id: &str) -> Option<&RecordDescriptor> {
        self.record_by_id.get(id).map(|&i| &self.records[i])
    }

    /// Looks a collection up by `collection_name` or by `murag_id`.
    pub fn get_collection(&self, name_or_id: &str) -> Option<&CollectionDescriptor> {
        self.collection_by_name
            .get(name_or_id)
            .or_else(|| self.collection_by_id.get(name_or_id))
            .map(|&i| &self.collections[i])
    }

    /// All collections sorted by `collection_name`.
    pub fn list_collections(&self) -> &[CollectionDescriptor] {
        &self.collections
    }

    pub fn records(&self) -> &[RecordDescriptor] {
        &self.records
    }

    pub fn parent_of(&self, record: &RecordDescriptor) -> &CollectionDescriptor {
        self.get_collection(&record.collection_name)
            .expect("store invariant: every record has a parent")
    }

    pub fn record_title(&self, record: &RecordDescriptor) -> String {
        derive_title(record, self.parent_of(record))
    }

    pub fn stats(&self) -> CorpusStats {
        let mut per: BTreeMap<String, usize> = self
            .collections
            .iter()
            .map(|c| (c.collection_name.clone(), 0))
            .collect();
        for r in &self.records {
            *per.entry(r.collection_name.clone()).or_default() += 1;
        }
        CorpusStats {
            total_records: self.records.len(),
            total_collections: self.collections.len(),
            records_per_collection: per,
        }
    }

    pub fn image_dir(&self) -> &Path {
        &self.image_dir
    }

    pub fn image_path(&self, image_name: &str) -> Option<PathBuf> {
        if !is_plain_file_name(image_name) {
            return None;
        }
        Some(self.image_dir.join(image_name))
    }

    pub fn read_image(&self, image_name: &str) -> Result<ImageData, StoreError> {
        let not_found = || StoreError::ImageNotFound(image_name.to_owned());
        let path = self.image_path(image_name).ok_or_else(not_found)?;
        let media_type = MediaType::from_file_name(image_name).ok_or_else(not_found)?;
        let bytes = std::fs::read(&path).map_err(|_| not_found())?;
        Ok(ImageData::new(bytes, media_type))
    }
}

/// A loaded store: data plus every index.
#[derive(Debug)]
pub struct Corpus {
    pub store: Store,
    pub vectors: BTreeMap<VectorField, HnswIndex>,
    pub lexical: Bm25Index,
    pub lock: StoreLock,
}

impl Corpus {
    /// Loads a store directory, verifying every artifact against the
    /// checksums recorded in `manifest.lock`.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let lock_path = dir.join(LOCK_FILE);
        if !lock_path.is_file() {
            return Err(StoreError::NotFound(dir.to_path_buf()));
        }
        let lock: StoreLock = serde_json::from_slice(&std::fs::read(&lock_path)?)
            .map_err(|e| StoreError::InvalidLock(e.to_string()))?;
        if lock.format_version != STORE_FORMAT_VERSION {
            return Err(StoreError::InvalidLock(format!(
                "unsupported store format {}",
                lock.format_version
            )));
        }
        let read = |file: &str| -> Result<Vec<u8>, StoreError> {
            let expected = lock
                .artifacts
                .get(file)
                .ok_or_else(|| StoreError::InvalidLock(format!("{file} missing from lock")))?;
            let bytes = std::fs::read(dir.join(file))?;
            if &snapshot::sha256_hex(&bytes) != expected {
                return Err(StoreError::ChecksumMismatch { file: file.to_owned() });
            }
            Ok(bytes)
        };

        let records = decode_records(&read(RECORDS_FILE)?)?;
        let collections = decode_collections(&read(COLLECTIONS_FILE)?)?;
        let store = Store::new(collections, records, dir.join(IMAGES_DIR))?;
        let mut vectors = BTreeMap::new();
        for field in VectorField::ALL {
            let index = HnswIndex::from_bytes(&read(field.file_name())?)?;
            if index.dim() != lock.dimension {
                return Err(StoreError::Inconsistent(format!(
                    "{} has dimension {} but the lock says {}",
                    field.file_name(),
                    index.dim(),
                    lock.dimension
                )));
            }
            vectors.insert(field, index);
        }
        let lexical = Bm25Index::from_bytes(&read(BM25_FILE)?)?;
        Ok(Corpus {
            store,
            vectors,
            lexical,
            lock,
        })
    }

    pub fn index(&self, field: VectorField) -> &HnswIndex {
        &self.vectors[&field]
    }
}
