//! Okapi BM25 inverted index over collection titles/descriptions and record
//! titles.
//!
//! Scoring is `sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))`
//! with `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))`, which is never negative.
//! Document statistics span every document in the index; kind filters only
//! restrict which documents are returned.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::MuragId;
use crate::snapshot::{self, BodyReader, BodyWriter, SnapshotError};

const MAGIC: &[u8; 8] = b"CURBM25\0";
const FORMAT_VERSION: u32 = 1;

/// Lowercases and splits on every non-alphanumeric character. No stemming and
/// no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), Bm25Error> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Bm25Error::InvalidParams(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Bm25Error::InvalidParams(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    RecordTitle,
    CollectionTitle,
    CollectionDescription,
}

impl DocKind {
    fn code(self) -> u8 {
        match self {
            DocKind::RecordTitle => 0,
            DocKind::CollectionTitle => 1,
            DocKind::CollectionDescription => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DocKind::RecordTitle),
            1 => Some(DocKind::CollectionTitle),
            2 => Some(DocKind::CollectionDescription),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexicalDoc {
    pub id: MuragId,
    pub kind: DocKind,
    pub text: String,
    pub tokens: Vec<String>,
}

impl LexicalDoc {
    pub fn new(id: MuragId, kind: DocKind, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self { id, kind, text, tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalHit {
    pub id: MuragId,
    pub kind: DocKind,
    pub score: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum Bm25Error {
    #[error("document {0} ({1:?}) appears twice")]
    DuplicateId(MuragId, DocKind),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[derive(Debug, Clone, PartialEq)]
struct DocEntry {
    id: MuragId,
    kind: DocKind,
    text: String,
    len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<DocEntry>,
    // term -> (doc index, term frequency), doc indexes ascending
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    avgdl: f64,
}

impl Bm25Index {
    /// Builds an index. A document is identified by `(id, kind)`, so a
    /// collection's title and description may share its id.
    pub fn build(docs: Vec<LexicalDoc>, params: Bm25Params) -> Result<Self, Bm25Error> {
        params.validate()?;
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(docs.len());
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (index, doc) in docs.into_iter().enumerate() {
            if !seen.insert((doc.id.clone(), doc.kind)) {
                return Err(Bm25Error::DuplicateId(doc.id, doc.kind));
            }
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &doc.tokens {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                postings
                    .entry(term.to_owned())
                    .or_default()
                    .push((index as u32, count));
            }
            entries.push(DocEntry {
                len: doc.tokens.len() as u32,
                id: doc.id,
                kind: doc.kind,
                text: doc.text,
            });
        }
        let avgdl = mean_len(&entries);
        Ok(Self {
            params,
            docs: entries,
            postings,
            avgdl,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn count_kind(&self, kind: DocKind) -> usize {
        self.docs.iter().filter(|d| d.kind == kind).count()
    }

    pub fn contains(&self, id: &MuragId, kind: DocKind) -> bool {
        self.docs.iter().any(|d| &d.id == id && d.kind == kind)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Ranks documents with at least one query term. `kinds` restricts the
    /// result to the listed document kinds. Repeated query terms count once.
    pub fn search(&self, query: &str, k: usize, kinds: Option<&[DocKind]>) -> Vec<LexicalHit> {
        if k == 0 {
            return Vec::new();
        }
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(doc, tf) in list {
                let entry = &self.docs[doc as usize];
                if kinds.is_some_and(|ks| !ks.contains(&entry.kind)) {
                    continue;
                }
                let tf = f64::from(tf);
                let dl = f64::from(entry.len);
                let norm = 1.0 - b + b * dl / self.avgdl;
                *scores.entry(doc).or_default() += idf * (tf * (k1 + 1.0)) / (tf + k1 * norm);
            }
        }
        let mut hits: Vec<LexicalHit> = scores
            .into_iter()
            .map(|(doc, score)| {
                let entry = &self.docs[doc as usize];
                LexicalHit {
                    id: entry.id.clone(),
                    kind: entry.kind,
                    score,
                }
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.id.cmp(&b.id))
                .then_with(|| a.kind.cmp(&b.kind))
        });
        hits.truncate(k);
        hits
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        body.put_f64(self.params.k1);
        body.put_f64(self.params.b);
        body.put_u64(self.docs.len() as u64);
        for d in &self.docs {
            body.put_str(d.id.as_str());
            body.put_u8(d.kind.code());
            body.put_str(&d.text);
            body.put_u32(d.len);
        }
        body.put_u64(self.postings.len() as u64);
        for (term, list) in &self.postings {
            body.put_str(term);
            body.put_u64(list.len() as u64);
            for &(doc, tf) in list {
                body.put_u32(doc);
                body.put_u32(tf);
            }
        }
        snapshot::encode_frame(MAGIC, FORMAT_VERSION, &body)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Bm25Error> {
        let body = snapshot::decode_frame(MAGIC, FORMAT_VERSION, bytes)?;
        let corrupt = |d: &str| Bm25Error::Snapshot(SnapshotError::corrupt(d));
        let mut r = BodyReader::new(body);
        let params = Bm25Params { k1: r.f64()?, b: r.f64()? };
        params.validate().map_err(|_| corrupt("invalid parameters"))?;

        let n = r.count(4 + 1 + 4 + 4)?;
        let mut docs = Vec::with_capacity(n);
        let mut seen = HashSet::new();
        for _ in 0..n {
            let id = MuragId::new(r.string()?).map_err(|_| corrupt("empty id"))?;
            let kind = DocKind::from_code(r.u8()?).ok_or_else(|| corrupt("unknown doc kind"))?;
            let text = r.string()?;
            let len = r.u32()?;
            if tokenize(&text).len() != len as usize {
                return Err(corrupt("document length does not match its text"));
            }
            if !seen.insert((id.clone(), kind)) {
                return Err(corrupt("duplicate document"));
            }
            docs.push(DocEntry { id, kind, text, len });
        }

        let terms = r.count(4 + 8)?;
        let mut postings = BTreeMap::new();
        let mut tf_sums = vec![0u64; n];
        let mut previous: Option<String> = None;
        for _ in 0..terms {
            let term = r.string()?;
            if term.is_empty() || previous.as_ref().is_some_and(|p| *p >= term) {
                return Err(corrupt("terms not strictly ascending"));
            }
            let len = r.count(8)?;
            let mut list = Vec::with_capacity(len);
            let mut last_doc = None;
            for _ in 0..len {
                let doc = r.u32()?;
                let tf = r.u32()?;
                if doc as usize >= n || tf == 0 || last_doc.is_some_and(|l| l >= doc) {
                    return Err(corrupt("invalid posting"));
                }
                last_doc = Some(doc);
                tf_sums[doc as usize] += u64::from(tf);
                list.push((doc, tf));
            }
            if list.is_empty() {
                return Err(corrupt("empty posting list"));
            }
            previous = Some(term.clone());
            postings.insert(term, list);
        }
        r.finish()?;
        if docs.iter().zip(&tf_sums).any(|(d, &s)| u64::from(d.len) != s) {
            return Err(corrupt("postings disagree with document lengths"));
        }
        let avgdl = mean_len(&docs);
        Ok(Self {
            params,
            docs,
            postings,
            avgdl,
        })
    }

    pub fn persist(&self, path: &Path) -> Result<(), Bm25Error> {
        snapshot::write_atomic(path, &self.to_bytes()).map_err(SnapshotError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Bm25Error> {
        Self::from_bytes(&snapshot::read_file(path)?)
    }
}

fn mean_len(docs: &[DocEntry]) -> f64 {
    if docs.is_empty() {
        0.0
    } else {
        docs.iter().map(|d| f64::from(d.len)).sum::<f64>() / docs.len() as f64
    }
}
