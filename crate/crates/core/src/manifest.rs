//! JSON-lines corpus manifest.
//!
//! One JSON object per line, discriminated by `"kind"`. Blank lines are
//! skipped. An optional header line sets the image root, resolved relative to
//! the manifest file; without it images are looked up in `images/` next to the
//! manifest.
//!
//! ```text
//! {"kind":"manifest","image_root":"images"}
//! {"kind":"collection","collection_name":"minerals","title":"Mineralogical Collection","description":"Rock and mineral specimens","title_fields":["Mineral"],"fields":[{"name":"Mineral","label":"Mineral","label_de":"Mineral"}]}
//! {"kind":"record","fundus_id":1,"title":"Sample 1","catalogno":"M-0001","collection_name":"minerals","image_name":"m-0001.png","details":{"Mineral":"Quartz"}}
//! ```
//!
//! Optional collection keys: `title_de`, `description_de`, `contacts`,
//! `title_fields`, `fields`. Optional record key: `details`. Unknown keys are
//! rejected so typos surface at parse time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{CollectionDescriptor, ContactInfo, FieldSpec, MuragId, RecordDescriptor};

pub const DEFAULT_IMAGE_ROOT: &str = "images";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionEntry {
    pub collection_name: String,
    pub title: String,
    #[serde(default)]
    pub title_de: String,
    pub description: String,
    #[serde(default)]
    pub description_de: String,
    #[serde(default)]
    pub contacts: Vec<ContactInfo>,
    #[serde(default)]
    pub title_fields: Vec<String>,
    #[serde(default)]
    pub fields: Vec<FieldSpec>,
}

impl CollectionEntry {
    pub fn to_descriptor(&self) -> CollectionDescriptor {
        CollectionDescriptor {
            murag_id: MuragId::for_collection(&self.collection_name),
            collection_name: self.collection_name.clone(),
            title: self.title.clone(),
            title_de: self.title_de.clone(),
            description: self.description.clone(),
            description_de: self.description_de.clone(),
            contacts: self.contacts.clone(),
            title_fields: self.title_fields.clone(),
            fields: self.fields.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub fundus_id: i64,
    pub title: String,
    pub catalogno: String,
    pub collection_name: String,
    pub image_name: String,
    #[serde(default)]
    pub details: BTreeMap<String, String>,
}

impl RecordEntry {
    pub fn to_descriptor(&self) -> RecordDescriptor {
        RecordDescriptor {
            murag_id: MuragId::for_record(&self.collection_name, &self.catalogno, &self.image_name),
            fundus_id: self.fundus_id,
            title: self.title.clone(),
            catalogno: self.catalogno.clone(),
            collection_name: self.collection_name.clone(),
            image_name: self.image_name.clone(),
            details: self.details.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    #[serde(rename = "manifest")]
    Header {
        #[serde(default)]
        image_root: Option<String>,
    },
    Collection(CollectionEntry),
    Record(RecordEntry),
}

/// A manifest entry tagged with its 1-based source line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Located<T> {
    pub line: usize,
    pub entry: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    /// Image root as written in the header, if any.
    pub image_root: Option<String>,
    pub collections: Vec<Located<CollectionEntry>>,
    pub records: Vec<Located<RecordEntry>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("manifest line {line}: {message}")]
pub struct ManifestError {
    pub line: usize,
    pub message: String,
}

impl CorpusManifest {
    /// Parses manifest text. The first malformed line fails the whole parse.
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut manifest = CorpusManifest::default();
        let mut saw_entry = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(raw).map_err(|e| ManifestError {
                line,
                message: e.to_string(),
            })?;
            match parsed {
                Line::Header { image_root } => {
                    if saw_entry {
                        return Err(ManifestError {
                            line,
                            message: "manifest header must precede all entries".into(),
                        });
                    }
                    saw_entry = true;
                    if let Some(root) = &image_root {
                        if root.is_empty() {
                            return Err(ManifestError {
                                line,
                                message: "image_root must be non-empty".into(),
                            });
                        }
                    }
                    manifest.image_root = image_root;
                }
                Line::Collection(entry) => {
                    saw_entry = true;
                    manifest.collections.push(Located { line, entry });
                }
                Line::Record(entry) => {
                    saw_entry = true;
                    manifest.records.push(Located { line, entry });
                }
            }
        }
        Ok(manifest)
    }

    /// Image directory for a manifest stored at `manifest_path`.
    pub fn resolve_image_root(&self, manifest_path: &Path) -> PathBuf {
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        base.join(self.image_root.as_deref().unwrap_or(DEFAULT_IMAGE_ROOT))
    }

    /// Serializes back to JSON lines; `parse(to_jsonl(m)) == m` up to line numbers.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if self.image_root.is_some() {
            let header = Line::Header {
                image_root: self.image_root.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&header).expect("serializable")).unwrap();
        }
        for c in &self.collections {
            let line = Line::Collection(c.entry.clone());
            writeln!(out, "{}", serde_json::to_string(&line).expect("serializable")).unwrap();
        }
        for r in &self.records {
            let line = Line::Record(r.entry.clone());
            writeln!(out, "{}", serde_json::to_string(&line).expect("serializable")).unwrap();
        }
        out
    }
}
