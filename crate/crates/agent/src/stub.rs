//! Deterministic model providers for tests and offline demos.

use std::sync::Mutex;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::lvlm::{GenerateRequest, LvlmError, LvlmProvider, LvlmResponse, Role, ToolCall};

pub const STUB_TAG: &str = "stub";

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Respond(LvlmResponse),
    Unreachable,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCall {
    #[serde(default)]
    id: Option<String>,
    name: String,
    #[serde(default)]
    arguments: Map<String, Value>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawStep {
    ToolCalls { tool_calls: Vec<RawCall> },
    FinalText { final_text: String },
    Error { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid stub script: {0}")]
pub struct ScriptError(pub String);

/// Replays a fixed list of responses in order and records every request.
///
/// Script format: a JSON array whose elements are
/// `{"tool_calls":[{"id":"c1","name":"get_stats","arguments":{}}]}`,
/// `{"final_text":"..."}`, or `{"error":"unreachable"}`. Omitted call ids
/// become `call_<step>_<index>`.
#[derive(Debug, Default)]
pub struct ScriptedStub {
    steps: Vec<Step>,
    state: Mutex<StubState>,
}

#[derive(Debug, Default)]
struct StubState {
    next: usize,
    overrun: bool,
    requests: Vec<GenerateRequest>,
}

impl ScriptedStub {
    pub fn new(responses: Vec<LvlmResponse>) -> Self {
        Self {
            steps: responses.into_iter().map(Step::Respond).collect(),
            state: Mutex::default(),
        }
    }

    pub fn from_json(script: &str) -> Result<Self, ScriptError> {
        let raw: Vec<RawStep> = serde_json::from_str(script).map_err(|e| ScriptError(e.to_string()))?;
        let mut steps = Vec::with_capacity(raw.len());
        for (i, step) in raw.into_iter().enumerate() {
            steps.push(match step {
                RawStep::FinalText { final_text } => Step::Respond(LvlmResponse::FinalText(final_text)),
                RawStep::ToolCalls { tool_calls } => {
                    if tool_calls.is_empty() {
                        return Err(ScriptError(format!("step {i}: empty tool_calls")));
                    }
                    let calls = tool_calls
                        .into_iter()
                        .enumerate()
                        .map(|(j, c)| ToolCall {
                            id: c.id.unwrap_or_else(|| format!("call_{i}_{j}")),
                            name: c.name,
                            arguments: c.arguments,
                        })
                        .collect();
                    Step::Respond(LvlmResponse::ToolCalls(calls))
                }
                RawStep::Error { error } if error == "unreachable" => Step::Unreachable,
                RawStep::Error { error } => {
                    return Err(ScriptError(format!("step {i}: unknown error kind {error:?}")))
                }
            });
        }
        Ok(Self {
            steps,
            state: Mutex::default(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Requests received so far, in order.
    pub fn requests(&self) -> Vec<GenerateRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.state.lock().unwrap().next.min(self.steps.len())
    }

    /// True once a generation was requested past the end of the script.
    pub fn overrun(&self) -> bool {
        self.state.lock().unwrap().overrun
    }
}

#[async_trait]
impl LvlmProvider for ScriptedStub {
    fn provider_tag(&self) -> &str {
        STUB_TAG
    }

    async fn generate(&self, request: &GenerateRequest) -> Result<LvlmResponse, LvlmError> {
        let mut state = self.state.lock().unwrap();
        state.requests.push(request.clone());
        let index = state.next;
        let Some(step) = self.steps.get(index) else {
            state.overrun = true;
            return Err(LvlmError::ScriptExhausted(index + 1));
        };
        state.next += 1;
        match step {
            Step::Respond(r) => Ok(r.clone()),
            Step::Unreachable => Err(LvlmError::ProviderUnreachable("scripted outage".into())),
        }
    }
}

/// Offline demo model: answers a user message with one lexical record
/// search, then renders the hits as record tags. Requests without tools
/// (query rewriting, image analysis) get a fixed short answer.
#[derive(Debug, Default, Clone)]
pub struct DemoStub;

pub const DEMO_SEARCH_TOOL: &str = "lexical_search_records";

#[async_trait]
impl LvlmProvider for DemoStub {
    fn provider_tag(&self) -> &str {
        STUB_TAG
    }

    async fn generate(&self, request: &GenerateRequest) -> Result<LvlmResponse, LvlmError> {
        let last = request.history.last();
        if request.tools.is_empty() {
            let text = request.last_user_text().unwrap_or_default();
            return Ok(LvlmResponse::FinalText(if text.trim().is_empty() {
                "No answer available offline.".into()
            } else {
                text
            }));
        }
        match last.map(|t| t.role) {
            Some(Role::Tool) => {
                let hits: Value = serde_json::from_str(&last.unwrap().text()).unwrap_or(Value::Null);
                let ids: Vec<String> = hits
                    .get("hits")
                    .and_then(Value::as_array)
                    .map(|a| {
                        a.iter()
                            .filter_map(|h| h.get("murag_id").and_then(Value::as_str))
                            .map(|id| format!("<FundusRecord murag_id='{id}' />"))
                            .collect()
                    })
                    .unwrap_or_default();
                Ok(LvlmResponse::FinalText(if ids.is_empty() {
                    "I could not find any matching records.".into()
                } else {
                    format!("Here is what I found:\n\n{}", ids.join(" "))
                }))
            }
            _ => {
                let query = request.last_user_text().unwrap_or_default();
                if query.trim().is_empty() || !request.tools.iter().any(|t| t.name == DEMO_SEARCH_TOOL) {
                    return Ok(LvlmResponse::FinalText("What would you like to explore?".into()));
                }
                let mut arguments = Map::new();
                arguments.insert("query".into(), query.into());
                arguments.insert("k".into(), 5.into());
                Ok(LvlmResponse::ToolCalls(vec![ToolCall {
                    id: format!("demo_{}", request.history.len()),
                    name: DEMO_SEARCH_TOOL.into(),
                    arguments,
                }]))
            }
        }
    }
}
