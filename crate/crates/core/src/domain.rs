//! Collection and record schema shared by every other module.
//!
//! All types here are plain values: once built they are never mutated, so they
//! can be cloned into indexes and handed across threads freely.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Corpus-wide unique identifier of a stored record or collection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MuragId(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("murag_id must be non-empty")]
pub struct EmptyIdError;

impl MuragId {
    pub fn new(value: impl Into<String>) -> Result<Self, EmptyIdError> {
        let value = value.into();
        if value.is_empty() {
            return Err(EmptyIdError);
        }
        Ok(Self(value))
    }

    /// Identifier of a record: a content hash of the triple that makes a record
    /// image unique, so re-ingesting the same manifest reproduces the same ids.
    pub fn for_record(collection_name: &str, catalogno: &str, image_name: &str) -> Self {
        Self(content_hash(&["record", collection_name, catalogno, image_name]))
    }

    pub fn for_collection(collection_name: &str) -> Self {
        Self(content_hash(&["collection", collection_name]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

// 16 lowercase hex chars; short enough for a model to copy verbatim.
fn content_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}

impl TryFrom<String> for MuragId {
    type Error = EmptyIdError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<MuragId> for String {
    fn from(id: MuragId) -> Self {
        id.0
    }
}

impl fmt::Display for MuragId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for MuragId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::borrow::Borrow<str> for MuragId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactInfo {
    pub name: String,
    pub email: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub label: String,
    pub label_de: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionDescriptor {
    pub murag_id: MuragId,
    pub collection_name: String,
    pub title: String,
    pub title_de: String,
    pub description: String,
    pub description_de: String,
    #[serde(default)]
    pub contacts: Vec<ContactInfo>,
    #[serde(default)]
    pub title_fields: Vec<String>,
    #[serde(default)]
    pub fields: Vec<FieldSpec>,
}

impl CollectionDescriptor {
    pub fn has_field(&self, name: &str) -> bool {
        self.fields.iter().any(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDescriptor {
    pub murag_id: MuragId,
    pub fundus_id: i64,
    pub title: String,
    pub catalogno: String,
    pub collection_name: String,
    pub image_name: String,
    #[serde(default)]
    pub details: BTreeMap<String, String>,
}

impl RecordDescriptor {
    /// True when `other` is another image of the same physical object.
    /// Such records may differ only in `image_name` and `murag_id`.
    pub fn same_object_as(&self, other: &RecordDescriptor) -> bool {
        self.fundus_id == other.fundus_id
            && self.title == other.title
            && self.catalogno == other.catalogno
            && self.collection_name == other.collection_name
            && self.details == other.details
    }
}

/// A single schema problem. Violations are data: validation never fails, it
/// reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", content = "subject", rename_all = "snake_case")]
pub enum Violation {
    DuplicateCollectionName(String),
    DanglingTitleField(String),
    EmptyField(String),
    DuplicateFieldName(String),
    InvalidCollectionName(String),
    InvalidContact(String),
    UnknownCollection(String),
    UnknownDetailField(String),
    EmptyImageName,
    InvalidImageName(String),
    MissingImage(String),
    UnsupportedImageType(String),
    DuplicateMuragId(String),
    InconsistentFundusGroup(i64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateCollectionName(n) => write!(f, "duplicate collection_name {n}"),
            Violation::DanglingTitleField(n) => write!(f, "dangling title field {n}"),
            Violation::EmptyField(n) => write!(f, "empty mandatory field {n}"),
            Violation::DuplicateFieldName(n) => write!(f, "duplicate field name {n}"),
            Violation::InvalidCollectionName(n) => {
                write!(f, "collection_name {n:?} is not URL-safe")
            }
            Violation::InvalidContact(n) => write!(f, "invalid contact {n}"),
            Violation::UnknownCollection(n) => write!(f, "unknown collection {n}"),
            Violation::UnknownDetailField(n) => write!(f, "unknown detail field {n}"),
            Violation::EmptyImageName => f.write_str("empty image_name"),
            Violation::InvalidImageName(n) => write!(f, "invalid image_name {n:?}"),
            Violation::MissingImage(n) => write!(f, "missing image {n}"),
            Violation::UnsupportedImageType(n) => write!(f, "unsupported image type {n}"),
            Violation::DuplicateMuragId(id) => write!(f, "duplicate murag_id {id}"),
            Violation::InconsistentFundusGroup(id) => {
                write!(f, "records sharing fundus_id {id} differ beyond image_name")
            }
        }
    }
}

/// What validation needs to know about the corpus assembled so far.
#[derive(Debug, Default, Clone)]
pub struct CorpusState {
    collections: BTreeMap<String, CollectionDescriptor>,
}

impl CorpusState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, collection: CollectionDescriptor) {
        self.collections
            .insert(collection.collection_name.clone(), collection);
    }

    pub fn get(&self, collection_name: &str) -> Option<&CollectionDescriptor> {
        self.collections.get(collection_name)
    }

    pub fn contains(&self, collection_name: &str) -> bool {
        self.collections.contains_key(collection_name)
    }

    pub fn len(&self) -> usize {
        self.collections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.collections.is_empty()
    }
}

fn is_url_safe(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '~'))
}

fn is_mailbox(email: &str) -> bool {
    let Some((local, domain)) = email.split_once('@') else {
        return false;
    };
    !local.is_empty()
        && !domain.is_empty()
        && !domain.contains('@')
        && !domain.starts_with('.')
        && !domain.ends_with('.')
        && !email.chars().any(char::is_whitespace)
}

/// Returns every schema violation of `candidate` against the corpus built so
/// far. An empty list means the collection is valid.
pub fn validate_collection(candidate: &CollectionDescriptor, corpus: &CorpusState) -> Vec<Violation> {
    let mut violations = Vec::new();

    if corpus.contains(&candidate.collection_name) {
        violations.push(Violation::DuplicateCollectionName(
            candidate.collection_name.clone(),
        ));
    }
    if candidate.collection_name.is_empty() {
        violations.push(Violation::EmptyField("collection_name".into()));
    } else if !is_url_safe(&candidate.collection_name) {
        violations.push(Violation::InvalidCollectionName(
            candidate.collection_name.clone(),
        ));
    }
    if candidate.title.trim().is_empty() {
        violations.push(Violation::EmptyField("title".into()));
    }
    if candidate.description.trim().is_empty() {
        violations.push(Violation::EmptyField("description".into()));
    }

    let mut seen = BTreeSet::new();
    for field in &candidate.fields {
        if !seen.insert(field.name.as_str()) {
            violations.push(Violation::DuplicateFieldName(field.name.clone()));
        }
    }
    for name in &candidate.title_fields {
        if !seen.contains(name.as_str()) {
            violations.push(Violation::DanglingTitleField(name.clone()));
        }
    }
    for contact in &candidate.contacts {
        if contact.name.trim().is_empty() || !is_mailbox(&contact.email) {
            violations.push(Violation::InvalidContact(format!(
                "{} <{}>",
                contact.name, contact.email
            )));
        }
    }
    violations
}

/// Image names are plain file names relative to the store's image directory.
pub fn is_plain_file_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\', '\0'])
}

/// Validates a record against its parent collection (`None` when the
/// record's `collection_name` resolves to nothing).
pub fn validate_record(
    candidate: &RecordDescriptor,
    parent: Option<&CollectionDescriptor>,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    match parent {
        None => violations.push(Violation::UnknownCollection(
            candidate.collection_name.clone(),
        )),
        Some(parent) => {
            for key in candidate.details.keys() {
                if !parent.has_field(key) {
                    violations.push(Violation::UnknownDetailField(key.clone()));
                }
            }
        }
    }
    if candidate.image_name.is_empty() {
        violations.push(Violation::EmptyImageName);
    } else if !is_plain_file_name(&candidate.image_name) {
        violations.push(Violation::InvalidImageName(candidate.image_name.clone()));
    }
    violations
}

/// Display title of a record: the parent's title fields present in the
/// record's details, in order, joined by ", ". Falls back to the stored title.
pub fn derive_title(record: &RecordDescriptor, parent: &CollectionDescriptor) -> String {
    let parts: Vec<&str> = parent
        .title_fields
        .iter()
        .filter_map(|f| record.details.get(f))
        .map(String::as_str)
        .filter(|v| !v.trim().is_empty())
        .collect();
    if parts.is_empty() {
        record.title.clone()
    } else {
        parts.join(", ")
    }
}

/// A unit-normalized vector in the shared text/image embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VectorError {
    #[error("vector is empty")]
    Empty,
    #[error("vector has zero or non-finite norm")]
    Degenerate,
}

impl EmbeddingVector {
    /// Normalizes `components` to unit Euclidean length.
    pub fn normalized(components: Vec<f32>) -> Result<Self, VectorError> {
        if components.is_empty() {
            return Err(VectorError::Empty);
        }
        let norm = components
            .iter()
            .map(|&c| f64::from(c) * f64::from(c))
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(VectorError::Degenerate);
        }
        Ok(Self(
            components
                .into_iter()
                .map(|c| (f64::from(c) / norm) as f32)
                .collect(),
        ))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&c| f64::from(c) * f64::from(c))
            .sum::<f64>()
            .sqrt()
    }

    /// Cosine similarity; both vectors are unit length so this is the dot
    /// product, accumulated in f64.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}
