//! The tool-calling chat loop.
//!
//! Per user message: append the turn, then repeat generate → dispatch every
//! requested tool → append one tool turn per call, until the model answers
//! with text or the iteration cap is reached.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use curio_core::embedding::ImageData;

use crate::lvlm::{ChatPart, ChatTurn, GenerateRequest, LvlmResponse, Role, ToolCall, ToolSpec};
use crate::prompts::{build_system_prompt, PortalConfig};
use crate::tags::{retain_tags, RenderTag, TagKind};
use crate::tools::{tool_specs, Scope, ToolError, ToolErrorKind, Toolbox};

pub const DEFAULT_MAX_ITERATIONS: usize = 8;
pub const DEFAULT_HISTORY_BUDGET: usize = 40;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Generate rounds per user message.
    pub max_iterations: usize,
    /// Non-system turns sent to the model; older turns are dropped first.
    pub history_budget: usize,
    pub portal: PortalConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            history_budget: DEFAULT_HISTORY_BUDGET,
            portal: PortalConfig::default(),
        }
    }
}

/// Length of the ids handed to the model for uploaded images.
const UPLOAD_ID_LEN: usize = 16;

/// The id under which an attached image is known to the model and tools.
pub fn upload_id(image: &ImageData) -> String {
    image.content_id().chars().take(UPLOAD_ID_LEN).collect()
}

#[derive(Debug, Clone)]
pub struct ChatSession {
    pub id: String,
    pub model: String,
    /// Starts with the system turn.
    pub history: Vec<ChatTurn>,
    /// Images the user attached, by upload id.
    pub uploads: BTreeMap<String, ImageData>,
    pub created_at_ms: u64,
    pub last_active_ms: u64,
}

impl ChatSession {
    pub fn new(id: impl Into<String>, model: impl Into<String>, config: &AgentConfig, now_ms: u64) -> Self {
        Self {
            id: id.into(),
            model: model.into(),
            history: vec![ChatTurn::system(build_system_prompt(&config.portal))],
            uploads: BTreeMap::new(),
            created_at_ms: now_ms,
            last_active_ms: now_ms,
        }
    }

    /// Never moves `last_active_ms` backwards.
    pub fn touch(&mut self, now_ms: u64) {
        self.last_active_ms = self.last_active_ms.max(now_ms);
    }

    /// Builds a user turn and registers its images as uploads. Each image is
    /// followed by a text part naming its id so tools can refer to it.
    pub fn user_turn(&mut self, text: &str, images: Vec<ImageData>) -> ChatTurn {
        let mut parts = Vec::new();
        if !text.is_empty() {
            parts.push(ChatPart::Text(text.to_owned()));
        }
        for image in images {
            let id = upload_id(&image);
            parts.push(ChatPart::Image(image.clone()));
            parts.push(ChatPart::Text(format!("[attached image id: {id}]")));
            self.uploads.insert(id, image);
        }
        ChatTurn::user(parts)
    }

    fn system_prompt(&self) -> String {
        self.history.first().map(ChatTurn::text).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ToolOutcome {
    Ok { output: Value },
    Error { error: ToolError },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub call: ToolCall,
    pub outcome: ToolOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopOutcome {
    Completed,
    IterationCapExceeded,
    ProviderFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentReply {
    pub markdown_text: String,
    pub render_tags: Vec<RenderTag>,
    /// Tags removed because their murag_id does not exist.
    pub dropped_tags: Vec<RenderTag>,
    pub trace: Vec<TraceEntry>,
    pub outcome: LoopOutcome,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    TurnAppended {
        session_id: String,
        index: usize,
        role: Role,
    },
    ToolDispatched {
        session_id: String,
        call_id: String,
        tool: String,
        arguments: Map<String, Value>,
    },
    ToolCompleted {
        session_id: String,
        call_id: String,
        tool: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        error_kind: Option<ToolErrorKind>,
        elapsed_ms: u64,
    },
    ToolDisabled {
        session_id: String,
        tool: String,
    },
    TagDropped {
        session_id: String,
        tag: String,
    },
    LoopFinished {
        session_id: String,
        iterations: usize,
        outcome: LoopOutcome,
    },
}

pub trait TraceSink: Send + Sync {
    fn record(&self, event: &TraceEvent);
}

#[derive(Debug, Default)]
pub struct NoTrace;

impl TraceSink for NoTrace {
    fn record(&self, _: &TraceEvent) {}
}

#[derive(Debug, Default)]
pub struct MemoryTrace(Mutex<Vec<TraceEvent>>);

impl MemoryTrace {
    pub fn events(&self) -> Vec<TraceEvent> {
        self.0.lock().unwrap().clone()
    }
}

impl TraceSink for MemoryTrace {
    fn record(&self, event: &TraceEvent) {
        self.0.lock().unwrap().push(event.clone());
    }
}

/// Writes one JSON object per event.
#[derive(Debug)]
pub struct JsonlTrace<W: Write + Send>(Mutex<W>);

impl<W: Write + Send> JsonlTrace<W> {
    pub fn new(writer: W) -> Self {
        Self(Mutex::new(writer))
    }

    pub fn into_inner(self) -> W {
        self.0.into_inner().unwrap()
    }
}

impl<W: Write + Send> TraceSink for JsonlTrace<W> {
    fn record(&self, event: &TraceEvent) {
        let mut w = self.0.lock().unwrap();
        let line = serde_json::to_string(event).expect("trace events serialize");
        if let Err(e) = writeln!(w, "{line}") {
            tracing::warn!(error = %e, "trace write failed");
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("expected a user turn, got {0:?}")]
    NotAUserTurn(Role),
    #[error("invalid user turn: {0}")]
    InvalidTurn(String),
}

/// The turns sent to the model: the non-system history cut to `budget`
/// turns. Cuts only happen right before a user turn so tool results never
/// lose their calls; the current run (from `run_start`) is always kept.
pub fn window(history: &[ChatTurn], run_start: usize, budget: usize) -> Vec<ChatTurn> {
    let rest: Vec<&ChatTurn> = history.iter().filter(|t| t.role != Role::System).collect();
    let run_start = run_start.min(rest.len());
    let start = (0..=run_start)
        .find(|&i| rest.len() - i <= budget && rest.get(i).is_some_and(|t| t.role == Role::User))
        .unwrap_or(run_start);
    rest[start..].iter().map(|t| (*t).clone()).collect()
}

fn tag_resolves(toolbox: &Toolbox, tag: &RenderTag) -> bool {
    let store = &toolbox.corpus.store;
    match tag.kind {
        TagKind::FundusRecord => store.get_record(&tag.murag_id).is_some(),
        TagKind::FundusCollection => store
            .get_collection(&tag.murag_id)
            .is_some_and(|c| c.murag_id.as_str() == tag.murag_id),
    }
}

struct Run<'a> {
    session: &'a mut ChatSession,
    trace: &'a dyn TraceSink,
}

impl Run<'_> {
    fn push(&mut self, turn: ChatTurn) {
        self.session.history.push(turn);
        let index = self.session.history.len() - 1;
        self.trace.record(&TraceEvent::TurnAppended {
            session_id: self.session.id.clone(),
            index,
            role: self.session.history[index].role,
        });
    }
}

/// Runs one user message through the loop. Provider failures and the
/// iteration cap end the run with an explanatory assistant message; the
/// session stays usable either way.
pub async fn run_agentic_loop(
    session: &mut ChatSession,
    user_turn: ChatTurn,
    toolbox: &Toolbox,
    config: &AgentConfig,
    trace: &dyn TraceSink,
) -> Result<AgentReply, AgentError> {
    if user_turn.role != Role::User {
        return Err(AgentError::NotAUserTurn(user_turn.role));
    }
    user_turn.check().map_err(AgentError::InvalidTurn)?;

    let system_prompt = session.system_prompt();
    let model = session.model.clone();
    let uploads = session.uploads.clone();
    let scope = Scope {
        model: &model,
        uploads: &uploads,
    };
    let all_specs = tool_specs();
    let mut disabled: HashSet<String> = HashSet::new();
    let mut entries = Vec::new();
    let run_start = session.history.iter().filter(|t| t.role != Role::System).count();

    let mut run = Run { session, trace };
    run.push(user_turn);

    let mut iterations = 0;
    let (text, outcome) = loop {
        if iterations == config.max_iterations {
            break (
                format!(
                    "I'm sorry, I could not finish this request within {} steps. \
                     Please try rephrasing it or breaking it into smaller questions.",
                    config.max_iterations
                ),
                LoopOutcome::IterationCapExceeded,
            );
        }
        iterations += 1;
        let tools: Vec<ToolSpec> = all_specs.iter().filter(|s| !disabled.contains(&s.name)).cloned().collect();
        let request = GenerateRequest {
            system_prompt: system_prompt.clone(),
            history: window(&run.session.history, run_start, config.history_budget),
            tools,
        };
        let calls = match toolbox.gateway.generate(&model, &request).await {
            Ok(LvlmResponse::FinalText(text)) => break (text, LoopOutcome::Completed),
            Ok(LvlmResponse::ToolCalls(calls)) => calls,
            Err(e) => {
                tracing::warn!(session = %run.session.id, error = %e, "model call failed");
                break (
                    format!("I'm sorry, the language model is not available right now ({e}). Please try again later."),
                    LoopOutcome::ProviderFailed,
                );
            }
        };

        run.push(ChatTurn::assistant_tool_calls(calls.clone()));
        for call in calls {
            run.trace.record(&TraceEvent::ToolDispatched {
                session_id: run.session.id.clone(),
                call_id: call.id.clone(),
                tool: call.name.clone(),
                arguments: call.arguments.clone(),
            });
            let started = Instant::now();
            let result = if disabled.contains(&call.name) {
                Err(ToolError::new(
                    ToolErrorKind::ToolDisabled,
                    format!("{} failed earlier in this request and is disabled", call.name),
                ))
            } else {
                toolbox.dispatch(scope, &call).await
            };
            run.trace.record(&TraceEvent::ToolCompleted {
                session_id: run.session.id.clone(),
                call_id: call.id.clone(),
                tool: call.name.clone(),
                error_kind: result.as_ref().err().map(|e| e.error_kind),
                elapsed_ms: started.elapsed().as_millis() as u64,
            });
            let (content, outcome) = match result {
                Ok(output) => (output.to_string(), ToolOutcome::Ok { output }),
                Err(error) => {
                    let known = all_specs.iter().any(|s| s.name == call.name);
                    if known && !error.error_kind.is_parameter_error() && disabled.insert(call.name.clone()) {
                        run.trace.record(&TraceEvent::ToolDisabled {
                            session_id: run.session.id.clone(),
                            tool: call.name.clone(),
                        });
                    }
                    (
                        serde_json::to_string(&error).expect("tool errors serialize"),
                        ToolOutcome::Error { error },
                    )
                }
            };
            run.push(ChatTurn::tool(call.id.clone(), content));
            entries.push(TraceEntry { call, outcome });
        }
    };

    let (clean, render_tags, dropped_tags) = retain_tags(&text, |tag| tag_resolves(toolbox, tag));
    for tag in &dropped_tags {
        tracing::warn!(session = %run.session.id, %tag, "dropping render tag with unknown murag_id");
        run.trace.record(&TraceEvent::TagDropped {
            session_id: run.session.id.clone(),
            tag: tag.to_string(),
        });
    }
    run.push(ChatTurn::assistant_text(clean.clone()));
    run.trace.record(&TraceEvent::LoopFinished {
        session_id: run.session.id.clone(),
        iterations,
        outcome,
    });
    Ok(AgentReply {
        markdown_text: clean,
        render_tags,
        dropped_tags,
        trace: entries,
        outcome,
        iterations,
    })
}

/// Checks the history discipline: system turn first, the first non-system
/// turn is a user turn, and every assistant tool-call turn is followed
/// directly by one tool turn per call, in call order.
pub fn check_history_discipline(history: &[ChatTurn]) -> Result<(), String> {
    match history.first() {
        Some(t) if t.role == Role::System => {}
        _ => return Err("history must start with the system turn".into()),
    }
    if let Some(t) = history.get(1) {
        if t.role != Role::User {
            return Err("first turn after the system turn must be a user turn".into());
        }
    }
    let mut i = 1;
    while i < history.len() {
        let turn = &history[i];
        turn.check()?;
        match turn.role {
            Role::System => return Err(format!("system turn at {i}")),
            Role::Tool => return Err(format!("tool turn at {i} without a preceding call")),
            Role::Assistant if !turn.tool_calls.is_empty() => {
                for (j, call) in turn.tool_calls.iter().enumerate() {
                    let answer = history
                        .get(i + 1 + j)
                        .ok_or_else(|| format!("call {} at {i} has no tool turn", call.id))?;
                    if answer.role != Role::Tool || answer.tool_call_id.as_deref() != Some(call.id.as_str()) {
                        return Err(format!("call {} at {i} is not answered in order", call.id));
                    }
                }
                i += turn.tool_calls.len();
            }
            _ => {}
        }
        i += 1;
    }
    Ok(())
}
