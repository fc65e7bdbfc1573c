//! TOML configuration for the server and its model registry.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use curio_agent::agent::{AgentConfig, DEFAULT_HISTORY_BUDGET, DEFAULT_MAX_ITERATIONS};
use curio_agent::lvlm::{LvlmGateway, LvlmProvider};
use curio_agent::openai::{OpenAiConfig, OpenAiProvider};
use curio_agent::prompts::PortalConfig;
use curio_agent::stub::{DemoStub, ScriptedStub};
use curio_core::embedding::{Embedder, EmbeddingProviderConfig, RemoteEmbedder, StubEmbedder};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_SESSION_TTL_SECS: u64 = 3600;
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    pub store: PathBuf,
    #[serde(default = "default_ttl")]
    pub session_ttl_secs: u64,
    #[serde(default = "default_upload")]
    pub max_upload_bytes: usize,
    /// Origins allowed to call the API from a browser. Empty disables CORS.
    #[serde(default)]
    pub cors_origins: Vec<String>,
    /// Optional JSONL file receiving agent trace events.
    pub trace_log: Option<PathBuf>,
    /// HNSW beam width override for tool searches.
    pub ef_search: Option<usize>,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub agent: AgentSection,
    pub models: Vec<ModelConfig>,
}

fn default_bind() -> String {
    DEFAULT_BIND.into()
}
fn default_ttl() -> u64 {
    DEFAULT_SESSION_TTL_SECS
}
fn default_upload() -> usize {
    DEFAULT_MAX_UPLOAD_BYTES
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    /// Deterministic hash embedder; the dimension comes from the store.
    #[default]
    Stub,
    Remote {
        endpoint: String,
        #[serde(default)]
        timeout_secs: Option<u64>,
        #[serde(default)]
        retries: Option<u32>,
    },
}

impl EmbedderConfig {
    pub fn build(&self, dimension: usize) -> Result<Arc<dyn Embedder>, ConfigError> {
        Ok(match self {
            EmbedderConfig::Stub => Arc::new(StubEmbedder::new(dimension)),
            EmbedderConfig::Remote {
                endpoint,
                timeout_secs,
                retries,
            } => {
                let mut config = EmbeddingProviderConfig::new(endpoint.clone(), dimension);
                if let Some(t) = timeout_secs {
                    config.timeout_secs = *t;
                }
                if let Some(r) = retries {
                    config.retries = *r;
                }
                Arc::new(RemoteEmbedder::new(config).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub max_iterations: usize,
    pub history_budget: usize,
    pub portal_name: String,
    pub portal_description: String,
}

impl Default for AgentSection {
    fn default() -> Self {
        let portal = PortalConfig::default();
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            history_budget: DEFAULT_HISTORY_BUDGET,
            portal_name: portal.portal_name,
            portal_description: portal.portal_description,
        }
    }
}

impl AgentSection {
    pub fn to_agent_config(&self) -> AgentConfig {
        AgentConfig {
            max_iterations: self.max_iterations,
            history_budget: self.history_budget,
            portal: PortalConfig {
                portal_name: self.portal_name.clone(),
                portal_description: self.portal_description.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ModelConfig {
    pub id: String,
    pub display_name: Option<String>,
    #[serde(flatten)]
    pub provider: ProviderConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum ProviderConfig {
    /// Offline demo model: searches the record index, then renders hits.
    #[serde(alias = "stub")]
    Demo,
    /// Replays a JSON script of responses.
    Scripted { script: PathBuf },
    /// Any OpenAI-compatible chat-completions endpoint.
    Openai {
        base_url: String,
        model: String,
        /// Environment variable holding the API key.
        api_key_env: Option<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
        #[serde(default)]
        retries: Option<u32>,
    },
}

impl ModelConfig {
    fn provider(&self) -> Result<Arc<dyn LvlmProvider>, ConfigError> {
        Ok(match &self.provider {
            ProviderConfig::Demo => Arc::new(DemoStub),
            ProviderConfig::Scripted { script } => Arc::new(
                ScriptedStub::load(script)
                    .map_err(|e| ConfigError::Invalid(format!("model {}: {e}", self.id)))?,
            ),
            ProviderConfig::Openai {
                base_url,
                model,
                api_key_env,
                timeout_secs,
                retries,
            } => {
                let api_key = match api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        ConfigError::Invalid(format!("model {}: environment variable {var} is not set", self.id))
                    })?),
                    None => None,
                };
                let config = OpenAiConfig {
                    base_url: base_url.clone(),
                    model: model.clone(),
                    api_key,
                    timeout_secs: timeout_secs.unwrap_or(120),
                    retries: retries.unwrap_or(1),
                };
                Arc::new(OpenAiProvider::new(config).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
        })
    }
}

/// Builds the gateway in config order; the first model is the default.
pub fn build_gateway(models: &[ModelConfig]) -> Result<LvlmGateway, ConfigError> {
    let mut entries = Vec::with_capacity(models.len());
    for m in models {
        let display = m.display_name.clone().unwrap_or_else(|| m.id.clone());
        entries.push((m.id.clone(), display, m.provider()?));
    }
    LvlmGateway::new(entries).map_err(|e| ConfigError::Invalid(e.to_string()))
}

impl ServerConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ServerConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.store = base.join(&config.store);
        if let Some(t) = &config.trace_log {
            config.trace_log = Some(base.join(t));
        }
        for m in &mut config.models {
            if let ProviderConfig::Scripted { script } = &mut m.provider {
                *script = base.join(&*script);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_owned()));
        if self.session_ttl_secs == 0 {
            return invalid("session_ttl_secs must be positive");
        }
        if self.max_upload_bytes == 0 {
            return invalid("max_upload_bytes must be positive");
        }
        if self.models.is_empty() {
            return invalid("at least one model is required");
        }
        let mut seen = HashSet::new();
        for m in &self.models {
            if !seen.insert(m.id.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate model id {}", m.id)));
            }
        }
        if self.agent.max_iterations == 0 {
            return invalid("agent.max_iterations must be positive");
        }
        if self.ef_search == Some(0) {
            return invalid("ef_search must be positive");
        }
        Ok(())
    }
}
