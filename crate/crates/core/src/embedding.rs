//! Text and image embedding providers sharing one aligned vector space.
//!
//! Two implementations sit behind [`Embedder`]: [`StubEmbedder`], a pure
//! hash projection used offline and in tests, and [`RemoteEmbedder`], an HTTP
//! client for a model server.
//!
//! Remote wire format (one endpoint URL):
//!
//! * text: `POST <endpoint>` with `Content-Type: application/json` and body
//!   `{"texts": ["...", ...]}`
//! * image: `POST <endpoint>` with `Content-Type: image/png` or `image/jpeg`
//!   and the raw image bytes as body
//!
//! Both answer `{"vectors": [[f32, ...], ...]}`, one vector per input, in
//! input order. Vectors are normalized on the client unconditionally.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::domain::EmbeddingVector;

pub const DEFAULT_DIMENSION: usize = 1152;
pub const DEFAULT_MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MediaType {
    #[serde(rename = "image/png")]
    Png,
    #[serde(rename = "image/jpeg")]
    Jpeg,
}

impl MediaType {
    pub fn parse(s: &str) -> Result<Self, EmbedError> {
        let essence = s.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
        match essence.as_str() {
            "image/png" => Ok(MediaType::Png),
            "image/jpeg" | "image/jpg" => Ok(MediaType::Jpeg),
            _ => Err(EmbedError::UnsupportedMediaType(s.to_owned())),
        }
    }

    /// Guesses from a file name extension.
    pub fn from_file_name(name: &str) -> Option<Self> {
        let ext = name.rsplit_once('.')?.1.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(MediaType::Png),
            "jpg" | "jpeg" => Some(MediaType::Jpeg),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MediaType::Png => "image/png",
            MediaType::Jpeg => "image/jpeg",
        }
    }
}

impl fmt::Display for MediaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Image bytes with their media type. Cloning shares the bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageData {
    pub bytes: Arc<[u8]>,
    pub media_type: MediaType,
}

impl ImageData {
    pub fn new(bytes: impl Into<Arc<[u8]>>, media_type: MediaType) -> Self {
        Self {
            bytes: bytes.into(),
            media_type,
        }
    }

    /// SHA-256 hex of the bytes; used as a content id.
    pub fn content_id(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    /// Pixel dimensions read from the image header.
    pub fn dimensions(&self) -> Option<(u32, u32)> {
        let format = match self.media_type {
            MediaType::Png => image::ImageFormat::Png,
            MediaType::Jpeg => image::ImageFormat::Jpeg,
        };
        image::ImageReader::with_format(std::io::Cursor::new(&self.bytes[..]), format)
            .into_dimensions()
            .ok()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
    #[error("unsupported media type {0}")]
    UnsupportedMediaType(String),
    #[error("image of {size} bytes exceeds the {limit} byte limit")]
    OversizePayload { size: usize, limit: usize },
    #[error("invalid embedding input: {0}")]
    InvalidInput(String),
}

#[async_trait]
pub trait Embedder: Send + Sync {
    /// Dimension of every vector this embedder returns.
    fn dimension(&self) -> usize;

    /// Short description recorded in store metadata, e.g. `stub:1152`.
    fn describe(&self) -> String;

    /// One unit vector per input text, in input order.
    async fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    async fn embed_image(&self, image: &ImageData) -> Result<EmbeddingVector, EmbedError>;
}

fn check_texts(texts: &[String]) -> Result<(), EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::InvalidInput("no texts given".into()));
    }
    if texts.iter().any(|t| t.is_empty()) {
        return Err(EmbedError::InvalidInput("empty text".into()));
    }
    Ok(())
}

fn check_image(image: &ImageData, limit: usize) -> Result<(), EmbedError> {
    if image.bytes.len() > limit {
        return Err(EmbedError::OversizePayload {
            size: image.bytes.len(),
            limit,
        });
    }
    Ok(())
}

/// Deterministic stand-in for a real model.
///
/// The input bytes (with a modality tag) are hashed once with SHA-256; each
/// dimension then derives two 64-bit words by SplitMix64-mixing the digest
/// with the dimension index, turns them into a standard-normal deviate with
/// Box-Muller, and the result is normalized. Pure integer and IEEE arithmetic,
/// so vectors are identical on every platform. There is no semantic alignment
/// between texts and images.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dimension: usize,
    max_image_bytes: usize,
}

impl StubEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self {
            dimension,
            max_image_bytes: DEFAULT_MAX_IMAGE_BYTES,
        }
    }

    pub fn with_max_image_bytes(mut self, limit: usize) -> Self {
        self.max_image_bytes = limit;
        self
    }

    fn project(&self, tag: &[u8], bytes: &[u8]) -> EmbeddingVector {
        let mut hasher = Sha256::new();
        hasher.update(tag);
        hasher.update(bytes);
        let digest = hasher.finalize();
        let key = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
            ^ u64::from_le_bytes(digest[8..16].try_into().expect("8 bytes")).rotate_left(17)
            ^ u64::from_le_bytes(digest[16..24].try_into().expect("8 bytes")).rotate_left(31)
            ^ u64::from_le_bytes(digest[24..].try_into().expect("8 bytes")).rotate_left(47);
        let components: Vec<f32> = (0..self.dimension as u64)
            .map(|i| {
                let a = splitmix64(key ^ i.wrapping_mul(0xA24B_AED4_963E_E407));
                let b = splitmix64(a ^ 0x9FB2_1C65_1E98_DF25);
                // 53-bit uniforms; u1 in (0, 1] keeps ln finite
                let u1 = ((a >> 11) + 1) as f64 / (1u64 << 53) as f64;
                let u2 = (b >> 11) as f64 / (1u64 << 53) as f64;
                ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
            })
            .collect();
        EmbeddingVector::normalized(components).expect("gaussian projection is never all zero")
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[async_trait]
impl Embedder for StubEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn describe(&self) -> String {
        format!("stub:{}", self.dimension)
    }

    async fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_texts(texts)?;
        Ok(texts.iter().map(|t| self.project(b"text\0", t.as_bytes())).collect())
    }

    async fn embed_image(&self, image: &ImageData) -> Result<EmbeddingVector, EmbedError> {
        check_image(image, self.max_image_bytes)?;
        Ok(self.project(b"image\0", &image.bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub endpoint: String,
    pub dimension: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_max_image_bytes")]
    pub max_image_bytes: usize,
}

fn default_timeout_secs() -> u64 {
    30
}
fn default_retries() -> u32 {
    2
}
fn default_max_in_flight() -> usize {
    8
}
fn default_max_image_bytes() -> usize {
    DEFAULT_MAX_IMAGE_BYTES
}

impl EmbeddingProviderConfig {
    pub fn new(endpoint: impl Into<String>, dimension: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            dimension,
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            max_in_flight: default_max_in_flight(),
            max_image_bytes: default_max_image_bytes(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct VectorsResponse {
    vectors: Vec<Vec<f32>>,
}

/// HTTP client for a remote embedding server.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    config: EmbeddingProviderConfig,
    client: reqwest::Client,
    in_flight: Arc<Semaphore>,
}

impl RemoteEmbedder {
    pub fn new(config: EmbeddingProviderConfig) -> Result<Self, EmbedError> {
        if config.dimension == 0 {
            return Err(EmbedError::InvalidInput("dimension must be positive".into()));
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| EmbedError::ProviderUnreachable(e.to_string()))?;
        Ok(Self {
            in_flight: Arc::new(Semaphore::new(config.max_in_flight.max(1))),
            config,
            client,
        })
    }

    async fn post(&self, content_type: &str, body: Vec<u8>, expected: usize) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let _permit = self
            .in_flight
            .acquire()
            .await
            .map_err(|e| EmbedError::ProviderUnreachable(e.to_string()))?;
        let mut last_error = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                tokio::time::sleep(Duration::from_millis(100 << attempt.min(6))).await;
            }
            let response = self
                .client
                .post(&self.config.endpoint)
                .header(reqwest::header::CONTENT_TYPE, content_type)
                .body(body.clone())
                .send()
                .await;
            let response = match response {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            if status.is_server_error() {
                last_error = format!("server returned {status}");
                continue;
            }
            if !status.is_success() {
                return Err(EmbedError::MalformedResponse(format!("server returned {status}")));
            }
            let bytes = response
                .bytes()
                .await
                .map_err(|e| EmbedError::ProviderUnreachable(e.to_string()))?;
            return self.decode(&bytes, expected);
        }
        Err(EmbedError::ProviderUnreachable(last_error))
    }

    fn decode(&self, bytes: &[u8], expected: usize) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let parsed: VectorsResponse =
            serde_json::from_slice(bytes).map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
        if parsed.vectors.len() != expected {
            return Err(EmbedError::MalformedResponse(format!(
                "expected {expected} vectors, got {}",
                parsed.vectors.len()
            )));
        }
        parsed
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.config.dimension {
                    return Err(EmbedError::MalformedResponse(format!(
                        "vector of length {} (expected {})",
                        v.len(),
                        self.config.dimension
                    )));
                }
                EmbeddingVector::normalized(v).map_err(|e| EmbedError::MalformedResponse(e.to_string()))
            })
            .collect()
    }
}

#[async_trait]
impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn describe(&self) -> String {
        format!("remote:{}:{}", self.config.endpoint, self.config.dimension)
    }

    async fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_texts(texts)?;
        let body = serde_json::to_vec(&serde_json::json!({ "texts": texts }))
            .map_err(|e| EmbedError::InvalidInput(e.to_string()))?;
        self.post("application/json", body, texts.len()).await
    }

    async fn embed_image(&self, image: &ImageData) -> Result<EmbeddingVector, EmbedError> {
        check_image(image, self.config.max_image_bytes)?;
        let mut out = self
            .post(image.media_type.as_str(), image.bytes.to_vec(), 1)
            .await?;
        Ok(out.remove(0))
    }
}
