//! The agent's tool registry: database lookup, lexical search, similarity
//! search with query rewriting, and image analysis.
//!
//! Tools never fail the loop. Every error becomes a structured tool message
//! `{"error_kind": ..., "detail": ...}` that the model can react to.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use curio_core::bm25::DocKind;
use curio_core::domain::{CollectionDescriptor, MuragId, RecordDescriptor};
use curio_core::embedding::{Embedder, ImageData};
use curio_core::hnsw::{rank_hits, HnswError, SearchHit};
use curio_core::store::{Corpus, CorpusStats, VectorField};

use crate::image::{self, DetectedObject};
use crate::lvlm::{ChatTurn, GenerateRequest, LvlmGateway, LvlmResponse, ParamKind, ParamSpec, ToolCall, ToolSpec};
use crate::prompts;

pub const DEFAULT_K: usize = 10;
pub const MAX_K: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    InvalidArguments,
    UnknownTool,
    NotFound,
    PreconditionViolation,
    EmptyIndex,
    EmbeddingFailed,
    ProviderFailed,
    MalformedModelOutput,
    ToolDisabled,
}

impl ToolErrorKind {
    /// Errors the model can fix by calling again with other arguments.
    pub fn is_parameter_error(self) -> bool {
        matches!(
            self,
            ToolErrorKind::InvalidArguments
                | ToolErrorKind::UnknownTool
                | ToolErrorKind::NotFound
                | ToolErrorKind::PreconditionViolation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{error_kind:?}: {detail}")]
pub struct ToolError {
    pub error_kind: ToolErrorKind,
    pub detail: String,
}

impl ToolError {
    pub fn new(kind: ToolErrorKind, detail: impl Into<String>) -> Self {
        Self {
            error_kind: kind,
            detail: detail.into(),
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(ToolErrorKind::NotFound, format!("{what} {id:?} not found"))
    }

    fn precondition(detail: impl Into<String>) -> Self {
        Self::new(ToolErrorKind::PreconditionViolation, detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteMode {
    TextToImage,
    TextToText,
}

impl RewriteMode {
    pub fn instruction(self) -> &'static str {
        match self {
            RewriteMode::TextToImage => prompts::REWRITE_TEXT_TO_IMAGE,
            RewriteMode::TextToText => prompts::REWRITE_TEXT_TO_TEXT,
        }
    }
}

/// Rewrites a search query with the model. Never fails: any provider
/// problem or empty answer yields `raw` unchanged.
pub async fn rewrite_query(gateway: &LvlmGateway, model: &str, raw: &str, mode: RewriteMode) -> String {
    if raw.trim().is_empty() {
        return raw.to_owned();
    }
    let request = GenerateRequest::new(mode.instruction(), vec![ChatTurn::user_text(raw)]);
    match gateway.generate(model, &request).await {
        Ok(LvlmResponse::FinalText(text)) if !text.trim().is_empty() => text.trim().to_owned(),
        Ok(_) => raw.to_owned(),
        Err(e) => {
            tracing::warn!(error = %e, "query rewriting failed, using the raw query");
            raw.to_owned()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordTarget {
    Image,
    Title,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionTarget {
    Title,
    Description,
}

/// A lexical or similarity hit on a stored entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub murag_id: MuragId,
    pub score: f64,
}

impl From<SearchHit> for Hit {
    fn from(h: SearchHit) -> Self {
        Hit {
            murag_id: h.id,
            score: h.score,
        }
    }
}

/// Shared services behind the tools. Cheap to clone.
#[derive(Clone)]
pub struct Toolbox {
    pub corpus: Arc<Corpus>,
    pub embedder: Arc<dyn Embedder>,
    pub gateway: Arc<LvlmGateway>,
    /// HNSW beam width override; `None` uses each index's own setting.
    pub ef_search: Option<usize>,
}

impl fmt::Debug for Toolbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Toolbox")
            .field("embedder", &self.embedder.describe())
            .field("ef_search", &self.ef_search)
            .finish()
    }
}

/// Per-request context: the active model and the session's uploaded images.
#[derive(Debug, Clone, Copy)]
pub struct Scope<'a> {
    pub model: &'a str,
    pub uploads: &'a BTreeMap<String, ImageData>,
}

fn check_k(k: usize) -> Result<usize, ToolError> {
    if k == 0 || k > MAX_K {
        return Err(ToolError::precondition(format!("k must be between 1 and {MAX_K}, got {k}")));
    }
    Ok(k)
}

fn check_query(query: &str) -> Result<(), ToolError> {
    if query.trim().is_empty() {
        return Err(ToolError::precondition("query must be non-empty"));
    }
    Ok(())
}

impl Toolbox {
    pub fn new(corpus: Arc<Corpus>, embedder: Arc<dyn Embedder>, gateway: Arc<LvlmGateway>) -> Self {
        Self {
            corpus,
            embedder,
            gateway,
            ef_search: None,
        }
    }

    // database lookup

    pub fn get_record(&self, murag_id: &str) -> Result<&RecordDescriptor, ToolError> {
        self.corpus
            .store
            .get_record(murag_id)
            .ok_or_else(|| ToolError::not_found("record", murag_id))
    }

    pub fn get_collection(&self, name_or_id: &str) -> Result<&CollectionDescriptor, ToolError> {
        self.corpus
            .store
            .get_collection(name_or_id)
            .ok_or_else(|| ToolError::not_found("collection", name_or_id))
    }

    pub fn list_collections(&self) -> &[CollectionDescriptor] {
        self.corpus.store.list_collections()
    }

    pub fn get_stats(&self) -> CorpusStats {
        self.corpus.store.stats()
    }

    // lexical search

    pub fn lexical_records(&self, query: &str, k: usize) -> Result<Vec<Hit>, ToolError> {
        check_k(k)?;
        check_query(query)?;
        Ok(self
            .corpus
            .lexical
            .search(query, k, Some(&[DocKind::RecordTitle]))
            .into_iter()
            .map(|h| Hit {
                murag_id: h.id,
                score: h.score,
            })
            .collect())
    }

    /// Searches collection titles and descriptions together; a collection
    /// matching in both keeps its higher score.
    pub fn lexical_collections(&self, query: &str, k: usize) -> Result<Vec<Hit>, ToolError> {
        check_k(k)?;
        check_query(query)?;
        let kinds = [DocKind::CollectionTitle, DocKind::CollectionDescription];
        let all = self.corpus.lexical.search(query, self.corpus.lexical.len().max(1), Some(&kinds));
        Ok(merge_max(all.into_iter().map(|h| (h.id, h.score)), k))
    }

    // similarity search

    fn search_index(&self, field: VectorField, query: &curio_core::domain::EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, ToolError> {
        let index = self.corpus.index(field);
        let ef = self.ef_search.map(|ef| ef.max(k));
        index.search(query, k, ef).map_err(|e| match e {
            HnswError::EmptyIndex => ToolError::new(ToolErrorKind::EmptyIndex, format!("the {field} index is empty")),
            other => ToolError::new(ToolErrorKind::EmbeddingFailed, other.to_string()),
        })
    }

    async fn embed_query(&self, text: &str) -> Result<curio_core::domain::EmbeddingVector, ToolError> {
        let mut vectors = self
            .embedder
            .embed_text(&[text.to_owned()])
            .await
            .map_err(|e| ToolError::new(ToolErrorKind::EmbeddingFailed, e.to_string()))?;
        Ok(vectors.remove(0))
    }

    /// Returns the rewritten query and the hits.
    pub async fn records_by_text(
        &self,
        scope: Scope<'_>,
        query: &str,
        k: usize,
        target: RecordTarget,
    ) -> Result<(String, Vec<Hit>), ToolError> {
        check_k(k)?;
        check_query(query)?;
        let (mode, field) = match target {
            RecordTarget::Image => (RewriteMode::TextToImage, VectorField::RecordImage),
            RecordTarget::Title => (RewriteMode::TextToText, VectorField::RecordTitle),
        };
        let rewritten = rewrite_query(&self.gateway, scope.model, query, mode).await;
        let vector = self.embed_query(&rewritten).await?;
        let hits = self.search_index(field, &vector, k)?;
        Ok((rewritten, hits.into_iter().map(Hit::from).collect()))
    }

    /// With no target, searches titles and descriptions and keeps each
    /// collection's best score.
    pub async fn collections_by_text(
        &self,
        scope: Scope<'_>,
        query: &str,
        k: usize,
        target: Option<CollectionTarget>,
    ) -> Result<(String, Vec<Hit>), ToolError> {
        check_k(k)?;
        check_query(query)?;
        let rewritten = rewrite_query(&self.gateway, scope.model, query, RewriteMode::TextToText).await;
        let vector = self.embed_query(&rewritten).await?;
        let fields: &[VectorField] = match target {
            Some(CollectionTarget::Title) => &[VectorField::CollectionTitle],
            Some(CollectionTarget::Description) => &[VectorField::CollectionDescription],
            None => &[VectorField::CollectionTitle, VectorField::CollectionDescription],
        };
        let mut all = Vec::new();
        for field in fields {
            all.extend(self.search_index(*field, &vector, k)?);
        }
        Ok((rewritten, merge_max(all.into_iter().map(|h| (h.id, h.score)), k)))
    }

    pub async fn records_by_image(&self, image: &ImageData, k: usize) -> Result<Vec<Hit>, ToolError> {
        check_k(k)?;
        let vector = self
            .embedder
            .embed_image(image)
            .await
            .map_err(|e| ToolError::new(ToolErrorKind::EmbeddingFailed, e.to_string()))?;
        Ok(self
            .search_index(VectorField::RecordImage, &vector, k)?
            .into_iter()
            .map(Hit::from)
            .collect())
    }

    // image analysis

    /// Resolves an uploaded image id or a record id to image bytes plus the
    /// metadata passed to image prompts (derived title and details of the
    /// owning record; empty for uploads).
    pub fn resolve_image(&self, scope: Scope<'_>, image_id: &str) -> Result<(ImageData, Value), ToolError> {
        if let Some(image) = scope.uploads.get(image_id) {
            return Ok((image.clone(), json!({})));
        }
        let record = self
            .corpus
            .store
            .get_record(image_id)
            .ok_or_else(|| ToolError::not_found("image or record", image_id))?;
        let image = self
            .corpus
            .store
            .read_image(&record.image_name)
            .map_err(|e| ToolError::new(ToolErrorKind::NotFound, e.to_string()))?;
        let metadata = json!({
            "title": self.corpus.store.record_title(record),
            "collection": record.collection_name,
            "catalogno": record.catalogno,
            "details": record.details,
        });
        Ok((image, metadata))
    }

    pub async fn vqa(&self, scope: Scope<'_>, image_id: &str, question: &str) -> Result<String, ToolError> {
        if question.trim().is_empty() {
            return Err(ToolError::precondition("question must be non-empty"));
        }
        let (image, metadata) = self.resolve_image(scope, image_id)?;
        image::vqa(&self.gateway, scope.model, &image, question, &metadata).await
    }

    pub async fn caption(&self, scope: Scope<'_>, image_id: &str, concise: bool) -> Result<String, ToolError> {
        let (image, metadata) = self.resolve_image(scope, image_id)?;
        image::caption(&self.gateway, scope.model, &image, &metadata, concise).await
    }

    pub async fn ocr(&self, scope: Scope<'_>, image_id: &str) -> Result<String, ToolError> {
        let (image, metadata) = self.resolve_image(scope, image_id)?;
        image::ocr(&self.gateway, scope.model, &image, &metadata).await
    }

    pub async fn detect_objects(&self, scope: Scope<'_>, image_id: &str) -> Result<Vec<DetectedObject>, ToolError> {
        let (image, metadata) = self.resolve_image(scope, image_id)?;
        image::detect_objects(&self.gateway, scope.model, &image, &metadata).await
    }

    // registry

    fn record_hits_json(&self, hits: &[Hit]) -> Value {
        let hits: Vec<Value> = hits
            .iter()
            .map(|h| match self.corpus.store.get_record(h.murag_id.as_str()) {
                Some(r) => json!({
                    "murag_id": h.murag_id,
                    "title": self.corpus.store.record_title(r),
                    "collection_name": r.collection_name,
                    "score": h.score,
                }),
                None => json!({"murag_id": h.murag_id, "score": h.score}),
            })
            .collect();
        json!({ "hits": hits })
    }

    fn collection_hits_json(&self, hits: &[Hit]) -> Value {
        let hits: Vec<Value> = hits
            .iter()
            .map(|h| match self.corpus.store.get_collection(h.murag_id.as_str()) {
                Some(c) => json!({
                    "murag_id": h.murag_id,
                    "collection_name": c.collection_name,
                    "title": c.title,
                    "score": h.score,
                }),
                None => json!({"murag_id": h.murag_id, "score": h.score}),
            })
            .collect();
        json!({ "hits": hits })
    }

    /// Validates the call against its spec, then runs it.
    pub async fn dispatch(&self, scope: Scope<'_>, call: &ToolCall) -> Result<Value, ToolError> {
        let spec = tool_specs()
            .into_iter()
            .find(|s| s.name == call.name)
            .ok_or_else(|| ToolError::new(ToolErrorKind::UnknownTool, format!("no tool named {:?}", call.name)))?;
        spec.validate(&call.arguments)
            .map_err(|e| ToolError::new(ToolErrorKind::InvalidArguments, e.to_string()))?;
        let args = Args(&call.arguments);
        match call.name.as_str() {
            "get_record" => {
                let record = self.get_record(args.str("murag_id"))?;
                let mut value = serde_json::to_value(record).expect("record serializes");
                value["display_title"] = self.corpus.store.record_title(record).into();
                Ok(value)
            }
            "get_collection" => Ok(serde_json::to_value(self.get_collection(args.str("name_or_id"))?)
                .expect("collection serializes")),
            "list_collections" => Ok(json!({ "collections": self.list_collections() })),
            "get_stats" => Ok(serde_json::to_value(self.get_stats()).expect("stats serialize")),
            "lexical_search_records" => {
                let hits = self.lexical_records(args.str("query"), args.k()?)?;
                Ok(self.record_hits_json(&hits))
            }
            "lexical_search_collections" => {
                let hits = self.lexical_collections(args.str("query"), args.k()?)?;
                Ok(self.collection_hits_json(&hits))
            }
            "similarity_search_records_by_text" => {
                let target = match args.opt_str("target") {
                    Some("title") => RecordTarget::Title,
                    _ => RecordTarget::Image,
                };
                let (rewritten, hits) = self.records_by_text(scope, args.str("query"), args.k()?, target).await?;
                let mut out = self.record_hits_json(&hits);
                out["rewritten_query"] = rewritten.into();
                Ok(out)
            }
            "similarity_search_collections_by_text" => {
                let target = match args.opt_str("target") {
                    Some("title") => Some(CollectionTarget::Title),
                    Some("description") => Some(CollectionTarget::Description),
                    _ => None,
                };
                let (rewritten, hits) = self
                    .collections_by_text(scope, args.str("query"), args.k()?, target)
                    .await?;
                let mut out = self.collection_hits_json(&hits);
                out["rewritten_query"] = rewritten.into();
                Ok(out)
            }
            "similarity_search_records_by_image" => {
                let (image, _) = self.resolve_image(scope, args.str("image_id"))?;
                let hits = self.records_by_image(&image, args.k()?).await?;
                Ok(self.record_hits_json(&hits))
            }
            "image_vqa" => Ok(json!({
                "answer": self.vqa(scope, args.str("image_id"), args.str("question")).await?
            })),
            "image_caption" => {
                let concise = args.0.get("concise").and_then(Value::as_bool).unwrap_or(false);
                Ok(json!({ "caption": self.caption(scope, args.str("image_id"), concise).await? }))
            }
            "image_ocr" => Ok(json!({ "text": self.ocr(scope, args.str("image_id")).await? })),
            "image_detect_objects" => Ok(json!({
                "objects": self.detect_objects(scope, args.str("image_id")).await?
            })),
            other => Err(ToolError::new(ToolErrorKind::UnknownTool, format!("no tool named {other:?}"))),
        }
    }
}

/// Deduplicates by id keeping the max score, then ranks and truncates.
fn merge_max(hits: impl IntoIterator<Item = (MuragId, f64)>, k: usize) -> Vec<Hit> {
    let mut best: HashMap<MuragId, f64> = HashMap::new();
    for (id, score) in hits {
        let entry = best.entry(id).or_insert(f64::NEG_INFINITY);
        if score > *entry {
            *entry = score;
        }
    }
    let mut ranked: Vec<SearchHit> = best.into_iter().map(|(id, score)| SearchHit { id, score }).collect();
    rank_hits(&mut ranked);
    ranked.truncate(k);
    ranked.into_iter().map(Hit::from).collect()
}

/// Typed access to already-validated arguments.
struct Args<'a>(&'a Map<String, Value>);

impl Args<'_> {
    fn str(&self, name: &str) -> &str {
        self.0.get(name).and_then(Value::as_str).unwrap_or_default()
    }

    fn opt_str(&self, name: &str) -> Option<&str> {
        self.0.get(name).and_then(Value::as_str)
    }

    fn k(&self) -> Result<usize, ToolError> {
        match self.0.get("k") {
            None | Some(Value::Null) => Ok(DEFAULT_K),
            Some(v) => v
                .as_u64()
                .and_then(|k| usize::try_from(k).ok())
                .ok_or_else(|| ToolError::precondition("k must be a positive integer")),
        }
    }
}

const IMAGE_ID_HELP: &str =
    "murag_id of a FundusRecord (its image is used) or the id of an image the user attached to the chat";

fn k_param() -> ParamSpec {
    ParamSpec::optional("k", ParamKind::Integer, "Number of results to return (default 10).")
}

fn image_param() -> ParamSpec {
    ParamSpec::required("image_id", ParamKind::String, IMAGE_ID_HELP)
}

/// Specs of every tool, in a fixed order.
pub fn tool_specs() -> Vec<ToolSpec> {
    let spec = |name: &str, description: &str, parameters: Vec<ParamSpec>| ToolSpec {
        name: name.into(),
        description: description.into(),
        parameters,
    };
    let query = || ParamSpec::required("query", ParamKind::String, "The search query.");
    vec![
        spec(
            "get_record",
            "Get a FundusRecord by its murag_id.",
            vec![ParamSpec::required("murag_id", ParamKind::String, "murag_id of the record.")],
        ),
        spec(
            "get_collection",
            "Get a FundusCollection by its collection_name or murag_id.",
            vec![ParamSpec::required(
                "name_or_id",
                ParamKind::String,
                "collection_name or murag_id of the collection.",
            )],
        ),
        spec("list_collections", "List all FundusCollections, sorted by collection_name.", vec![]),
        spec(
            "get_stats",
            "Get the number of records and collections and the number of records per collection.",
            vec![],
        ),
        spec(
            "lexical_search_records",
            "Keyword (BM25) search over FundusRecord titles.",
            vec![query(), k_param()],
        ),
        spec(
            "lexical_search_collections",
            "Keyword (BM25) search over FundusCollection titles and descriptions.",
            vec![query(), k_param()],
        ),
        spec(
            "similarity_search_records_by_text",
            "Semantic search for FundusRecords. target=image compares the query with record images, \
             target=title with record titles.",
            vec![
                query(),
                ParamSpec::optional(
                    "target",
                    ParamKind::Enum(vec!["image".into(), "title".into()]),
                    "What to compare the query with (default image).",
                ),
                k_param(),
            ],
        ),
        spec(
            "similarity_search_collections_by_text",
            "Semantic search for FundusCollections by title and/or description.",
            vec![
                query(),
                ParamSpec::optional(
                    "target",
                    ParamKind::Enum(vec!["title".into(), "description".into()]),
                    "What to compare the query with (default both).",
                ),
                k_param(),
            ],
        ),
        spec(
            "similarity_search_records_by_image",
            "Find FundusRecords whose images are similar to the given image.",
            vec![image_param(), k_param()],
        ),
        spec(
            "image_vqa",
            "Answer a question about an image.",
            vec![
                image_param(),
                ParamSpec::required("question", ParamKind::String, "The question about the image."),
            ],
        ),
        spec(
            "image_caption",
            "Generate a caption for an image.",
            vec![
                image_param(),
                ParamSpec::optional("concise", ParamKind::Boolean, "Generate a short caption (default false)."),
            ],
        ),
        spec("image_ocr", "Extract the text visible in an image.", vec![image_param()]),
        spec(
            "image_detect_objects",
            "Detect prominent objects in an image with bounding boxes.",
            vec![image_param()],
        ),
    ]
}
