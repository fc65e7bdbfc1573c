//! Provider-neutral chat model interface with function calling.
//!
//! The agent only ever sees these types. Adapters ([`crate::openai`],
//! [`crate::stub`]) translate to and from vendor wire formats.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use async_trait::async_trait;
use curio_core::embedding::ImageData;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// One piece of an interleaved text/image message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChatPart {
    Text(String),
    /// Shared bytes; history clones never copy image data.
    Image(ImageData),
}

impl Serialize for ChatPart {
    // Images are serialized by reference only.
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(3))?;
        match self {
            ChatPart::Text(text) => {
                map.serialize_entry("type", "text")?;
                map.serialize_entry("text", text)?;
            }
            ChatPart::Image(image) => {
                map.serialize_entry("type", "image")?;
                map.serialize_entry("content_id", &image.content_id())?;
                map.serialize_entry("media_type", image.media_type.as_str())?;
            }
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
}

/// A message in a conversation.
///
/// `parts` is non-empty for every role except an assistant turn that only
/// carries `tool_calls`. `tool_call_id` is set exactly on tool turns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatTurn {
    pub role: Role,
    pub parts: Vec<ChatPart>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
}

impl ChatTurn {
    fn new(role: Role, parts: Vec<ChatPart>) -> Self {
        Self {
            role,
            parts,
            tool_call_id: None,
            tool_calls: Vec::new(),
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Role::System, vec![ChatPart::Text(text.into())])
    }

    pub fn user_text(text: impl Into<String>) -> Self {
        Self::new(Role::User, vec![ChatPart::Text(text.into())])
    }

    pub fn user(parts: Vec<ChatPart>) -> Self {
        Self::new(Role::User, parts)
    }

    pub fn assistant_text(text: impl Into<String>) -> Self {
        Self::new(Role::Assistant, vec![ChatPart::Text(text.into())])
    }

    pub fn assistant_tool_calls(calls: Vec<ToolCall>) -> Self {
        Self {
            tool_calls: calls,
            ..Self::new(Role::Assistant, Vec::new())
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::new(Role::Tool, vec![ChatPart::Text(content.into())])
        }
    }

    /// All text parts joined with newlines.
    pub fn text(&self) -> String {
        let texts: Vec<&str> = self
            .parts
            .iter()
            .filter_map(|p| match p {
                ChatPart::Text(t) => Some(t.as_str()),
                ChatPart::Image(_) => None,
            })
            .collect();
        texts.join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageData> {
        self.parts.iter().filter_map(|p| match p {
            ChatPart::Image(i) => Some(i),
            ChatPart::Text(_) => None,
        })
    }

    /// Checks the per-turn shape rules.
    pub fn check(&self) -> Result<(), String> {
        match self.role {
            Role::Tool if self.tool_call_id.as_deref().unwrap_or("").is_empty() => {
                return Err("tool turn without tool_call_id".into())
            }
            Role::Tool => {}
            _ if self.tool_call_id.is_some() => {
                return Err(format!("{:?} turn with tool_call_id", self.role))
            }
            _ => {}
        }
        if !self.tool_calls.is_empty() && self.role != Role::Assistant {
            return Err(format!("{:?} turn with tool_calls", self.role));
        }
        if self.parts.is_empty() && self.tool_calls.is_empty() {
            return Err(format!("{:?} turn without content", self.role));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "values", rename_all = "snake_case")]
pub enum ParamKind {
    String,
    Integer,
    Number,
    Boolean,
    Enum(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub description: String,
    pub kind: ParamKind,
    pub required: bool,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamKind, description: &str) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            kind,
            required: true,
        }
    }

    pub fn optional(name: &str, kind: ParamKind, description: &str) -> Self {
        Self {
            required: false,
            ..Self::required(name, kind, description)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArgumentError {
    #[error("missing required argument {0}")]
    Missing(String),
    #[error("unknown argument {0}")]
    Unknown(String),
    #[error("argument {name} must be {expected}")]
    WrongType { name: String, expected: String },
}

impl ToolSpec {
    /// JSON Schema object describing the parameters, as function-calling
    /// APIs expect it.
    pub fn json_schema(&self) -> Value {
        let mut properties = Map::new();
        let mut required = Vec::new();
        for p in &self.parameters {
            let mut prop = Map::new();
            let ty = match &p.kind {
                ParamKind::String | ParamKind::Enum(_) => "string",
                ParamKind::Integer => "integer",
                ParamKind::Number => "number",
                ParamKind::Boolean => "boolean",
            };
            prop.insert("type".into(), ty.into());
            prop.insert("description".into(), p.description.clone().into());
            if let ParamKind::Enum(values) = &p.kind {
                prop.insert("enum".into(), values.clone().into());
            }
            properties.insert(p.name.clone(), Value::Object(prop));
            if p.required {
                required.push(Value::from(p.name.clone()));
            }
        }
        serde_json::json!({
            "type": "object",
            "properties": properties,
            "required": required,
            "additionalProperties": false,
        })
    }

    /// Type-checks call arguments against the parameter list. `null` counts
    /// as absent.
    pub fn validate(&self, arguments: &Map<String, Value>) -> Result<(), ArgumentError> {
        for name in arguments.keys() {
            if !self.parameters.iter().any(|p| &p.name == name) {
                return Err(ArgumentError::Unknown(name.clone()));
            }
        }
        for p in &self.parameters {
            let value = match arguments.get(&p.name) {
                None | Some(Value::Null) => {
                    if p.required {
                        return Err(ArgumentError::Missing(p.name.clone()));
                    }
                    continue;
                }
                Some(v) => v,
            };
            let (ok, expected) = match &p.kind {
                ParamKind::String => (value.is_string(), "a string".to_owned()),
                ParamKind::Integer => (value.is_i64() || value.is_u64(), "an integer".to_owned()),
                ParamKind::Number => (value.is_number(), "a number".to_owned()),
                ParamKind::Boolean => (value.is_boolean(), "a boolean".to_owned()),
                ParamKind::Enum(values) => (
                    value.as_str().is_some_and(|s| values.iter().any(|v| v == s)),
                    format!("one of {}", values.join(", ")),
                ),
            };
            if !ok {
                return Err(ArgumentError::WrongType {
                    name: p.name.clone(),
                    expected,
                });
            }
        }
        Ok(())
    }
}

/// Either a non-empty batch of tool calls or a final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LvlmResponse {
    ToolCalls(Vec<ToolCall>),
    FinalText(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateRequest {
    pub system_prompt: String,
    pub history: Vec<ChatTurn>,
    pub tools: Vec<ToolSpec>,
}

impl GenerateRequest {
    pub fn new(system_prompt: impl Into<String>, history: Vec<ChatTurn>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            history,
            tools: Vec::new(),
        }
    }

    /// Text of the last user turn, if any.
    pub fn last_user_text(&self) -> Option<String> {
        self.history.iter().rev().find(|t| t.role == Role::User).map(ChatTurn::text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LvlmError {
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("model provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("malformed model response: {0}")]
    MalformedResponse(String),
    #[error("invalid history: {0}")]
    InvalidHistory(String),
    #[error("scripted model has no response left (call {0})")]
    ScriptExhausted(usize),
    #[error("model configuration error: {0}")]
    Config(String),
}

#[async_trait]
pub trait LvlmProvider: Send + Sync {
    /// Provider tag shown in the model picker, e.g. `stub` or `openai`.
    fn provider_tag(&self) -> &str;

    async fn generate(&self, request: &GenerateRequest) -> Result<LvlmResponse, LvlmError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub display_name: String,
    pub provider: String,
}

/// Registry of configured models in configuration order.
#[derive(Clone)]
pub struct LvlmGateway {
    models: Vec<(ModelInfo, Arc<dyn LvlmProvider>)>,
}

impl fmt::Debug for LvlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LvlmGateway")
            .field("models", &self.list_models())
            .finish()
    }
}

impl LvlmGateway {
    /// Fails when no model is configured or an id repeats.
    pub fn new(models: Vec<(String, String, Arc<dyn LvlmProvider>)>) -> Result<Self, LvlmError> {
        if models.is_empty() {
            return Err(LvlmError::Config("at least one model must be configured".into()));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(models.len());
        for (id, display_name, provider) in models {
            if id.is_empty() || !seen.insert(id.clone()) {
                return Err(LvlmError::Config(format!("duplicate or empty model id {id:?}")));
            }
            let info = ModelInfo {
                id,
                display_name,
                provider: provider.provider_tag().to_owned(),
            };
            out.push((info, provider));
        }
        Ok(Self { models: out })
    }

    pub fn list_models(&self) -> Vec<ModelInfo> {
        self.models.iter().map(|(info, _)| info.clone()).collect()
    }

    pub fn contains(&self, model: &str) -> bool {
        self.models.iter().any(|(info, _)| info.id == model)
    }

    /// First configured model.
    pub fn default_model(&self) -> &str {
        &self.models[0].0.id
    }

    pub async fn generate(&self, model: &str, request: &GenerateRequest) -> Result<LvlmResponse, LvlmError> {
        let provider = self
            .models
            .iter()
            .find(|(info, _)| info.id == model)
            .map(|(_, p)| p.clone())
            .ok_or_else(|| LvlmError::UnknownModel(model.to_owned()))?;
        check_history(&request.history)?;
        let response = provider.generate(request).await?;
        if let LvlmResponse::ToolCalls(calls) = &response {
            if calls.is_empty() {
                return Err(LvlmError::MalformedResponse("empty tool call list".into()));
            }
        }
        Ok(response)
    }
}

/// The first non-system turn must be a user turn and every turn must be
/// well-shaped.
pub fn check_history(history: &[ChatTurn]) -> Result<(), LvlmError> {
    for turn in history {
        turn.check().map_err(LvlmError::InvalidHistory)?;
    }
    match history.iter().find(|t| t.role != Role::System) {
        Some(t) if t.role == Role::User => Ok(()),
        Some(t) => Err(LvlmError::InvalidHistory(format!(
            "first non-system turn is {:?}",
            t.role
        ))),
        None => Err(LvlmError::InvalidHistory("no user turn".into())),
    }
}
