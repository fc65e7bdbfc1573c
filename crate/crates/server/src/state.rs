//! Shared server state: the loaded corpus, the model gateway, and the
//! in-memory session table.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use curio_agent::agent::{AgentConfig, ChatSession, TraceEvent};
use curio_agent::lvlm::LvlmGateway;
use curio_agent::tags::RenderTag;
use curio_agent::tools::Toolbox;

use crate::clock::Clock;
use crate::error::ApiError;

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub session_ttl_ms: u64,
    pub max_upload_bytes: usize,
}

/// What the history endpoint returns per turn.
#[derive(Debug, Clone, Serialize)]
pub struct TranscriptEntry {
    pub role: &'static str,
    pub markdown: String,
    /// Upload ids of the images attached to a user turn.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<String>,
    #[serde(skip)]
    pub tags: Vec<RenderTag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
    pub created_at_ms: u64,
}

pub struct SessionData {
    pub session: ChatSession,
    pub transcript: Vec<TranscriptEntry>,
}

pub struct SessionSlot {
    last_active_ms: AtomicU64,
    pub data: tokio::sync::Mutex<SessionData>,
}

impl SessionSlot {
    pub fn touch(&self, now_ms: u64) {
        self.last_active_ms.fetch_max(now_ms, Ordering::SeqCst);
    }

    fn expired(&self, now_ms: u64, ttl_ms: u64) -> bool {
        now_ms.saturating_sub(self.last_active_ms.load(Ordering::SeqCst)) >= ttl_ms
    }
}

pub struct AppState {
    pub gateway: Arc<LvlmGateway>,
    pub agent: AgentConfig,
    pub limits: Limits,
    pub clock: Arc<dyn Clock>,
    toolbox: OnceLock<Arc<Toolbox>>,
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
    trace_log: Option<Mutex<File>>,
}

impl AppState {
    /// A state without a store; `/health` answers 503 until `install`.
    pub fn new(gateway: Arc<LvlmGateway>, agent: AgentConfig, limits: Limits, clock: Arc<dyn Clock>) -> Self {
        Self {
            gateway,
            agent,
            limits,
            clock,
            toolbox: OnceLock::new(),
            sessions: Mutex::new(HashMap::new()),
            trace_log: None,
        }
    }

    pub fn with_trace_log(mut self, path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        self.trace_log = Some(Mutex::new(file));
        Ok(self)
    }

    /// Makes the store available. Only the first call has an effect.
    pub fn install(&self, toolbox: Toolbox) {
        if self.toolbox.set(Arc::new(toolbox)).is_err() {
            tracing::warn!("store already installed");
        }
    }

    pub fn toolbox(&self) -> Option<&Arc<Toolbox>> {
        self.toolbox.get()
    }

    pub fn ready(&self) -> Result<&Arc<Toolbox>, ApiError> {
        self.toolbox().ok_or_else(ApiError::not_ready)
    }

    pub fn create_session(&self, model: &str) -> String {
        let now = self.clock.now_ms();
        self.evict_expired(now);
        let id = uuid::Uuid::new_v4().simple().to_string();
        let slot = SessionSlot {
            last_active_ms: AtomicU64::new(now),
            data: tokio::sync::Mutex::new(SessionData {
                session: ChatSession::new(id.clone(), model, &self.agent, now),
                transcript: Vec::new(),
            }),
        };
        self.sessions.lock().unwrap().insert(id.clone(), Arc::new(slot));
        id
    }

    /// Looks up a live session. An expired one is removed and reported as
    /// missing.
    pub fn session(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        let now = self.clock.now_ms();
        let mut sessions = self.sessions.lock().unwrap();
        let slot = sessions.get(id).cloned().ok_or_else(|| ApiError::session_not_found(id))?;
        if slot.expired(now, self.limits.session_ttl_ms) && slot.data.try_lock().is_ok() {
            sessions.remove(id);
            return Err(ApiError::session_not_found(id));
        }
        Ok(slot)
    }

    /// Drops idle sessions. Sessions with a run in flight are kept.
    pub fn evict_expired(&self, now_ms: u64) -> usize {
        let ttl = self.limits.session_ttl_ms;
        let mut sessions = self.sessions.lock().unwrap();
        let before = sessions.len();
        sessions.retain(|_, slot| !(slot.expired(now_ms, ttl) && slot.data.try_lock().is_ok()));
        before - sessions.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    pub fn write_trace(&self, trace_id: &str, events: &[TraceEvent]) {
        let Some(log) = &self.trace_log else { return };
        let mut file = log.lock().unwrap();
        for event in events {
            let mut line = serde_json::to_value(event).expect("trace events serialize");
            line["trace_id"] = trace_id.into();
            if let Err(e) = writeln!(file, "{line}") {
                tracing::warn!(error = %e, "trace log write failed");
                return;
            }
        }
    }
}
