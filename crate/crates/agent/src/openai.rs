//! Adapter for OpenAI-compatible `/chat/completions` endpoints (OpenAI,
//! vLLM, Ollama, LiteLLM and similar gateways).

use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::lvlm::{ChatPart, ChatTurn, GenerateRequest, LvlmError, LvlmProvider, LvlmResponse, Role, ToolCall};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiConfig {
    /// Base URL up to and including the version segment, e.g.
    /// `https://api.openai.com/v1`.
    pub base_url: String,
    /// Model name sent upstream.
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_secs() -> u64 {
    120
}
fn default_retries() -> u32 {
    1
}

#[derive(Debug, Clone)]
pub struct OpenAiProvider {
    config: OpenAiConfig,
    client: reqwest::Client,
}

impl OpenAiProvider {
    pub fn new(config: OpenAiConfig) -> Result<Self, LvlmError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LvlmError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

fn part_json(part: &ChatPart) -> Value {
    match part {
        ChatPart::Text(text) => json!({"type": "text", "text": text}),
        ChatPart::Image(image) => {
            let data = base64::engine::general_purpose::STANDARD.encode(&image.bytes);
            json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{};base64,{data}", image.media_type.as_str())}
            })
        }
    }
}

fn turn_json(turn: &ChatTurn) -> Value {
    match turn.role {
        Role::System => json!({"role": "system", "content": turn.text()}),
        Role::User => {
            let parts: Vec<Value> = turn.parts.iter().map(part_json).collect();
            json!({"role": "user", "content": parts})
        }
        Role::Assistant if !turn.tool_calls.is_empty() => {
            let calls: Vec<Value> = turn
                .tool_calls
                .iter()
                .map(|c| {
                    json!({
                        "id": c.id,
                        "type": "function",
                        "function": {
                            "name": c.name,
                            "arguments": Value::Object(c.arguments.clone()).to_string(),
                        }
                    })
                })
                .collect();
            let content = if turn.parts.is_empty() { Value::Null } else { turn.text().into() };
            json!({"role": "assistant", "content": content, "tool_calls": calls})
        }
        Role::Assistant => json!({"role": "assistant", "content": turn.text()}),
        Role::Tool => json!({
            "role": "tool",
            "tool_call_id": turn.tool_call_id,
            "content": turn.text(),
        }),
    }
}

/// Builds the request body for a neutral generate request.
pub fn request_body(model: &str, request: &GenerateRequest) -> Value {
    let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
    messages.extend(request.history.iter().map(turn_json));
    let mut body = json!({"model": model, "messages": messages});
    if !request.tools.is_empty() {
        let tools: Vec<Value> = request
            .tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.json_schema(),
                    }
                })
            })
            .collect();
        body["tools"] = tools.into();
    }
    body
}

/// Maps a completion response to the neutral type. Refusals and content
/// filter stops become final text.
pub fn parse_response(body: &Value) -> Result<LvlmResponse, LvlmError> {
    let malformed = |m: &str| LvlmError::MalformedResponse(m.to_owned());
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| malformed("no choices"))?;
    let message = choice.get("message").ok_or_else(|| malformed("no message"))?;
    if let Some(refusal) = message.get("refusal").and_then(Value::as_str) {
        return Ok(LvlmResponse::FinalText(refusal.to_owned()));
    }
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        if !calls.is_empty() {
            let mut out = Vec::with_capacity(calls.len());
            for call in calls {
                let id = call.get("id").and_then(Value::as_str).ok_or_else(|| malformed("tool call without id"))?;
                let function = call.get("function").ok_or_else(|| malformed("tool call without function"))?;
                let name = function
                    .get("name")
                    .and_then(Value::as_str)
                    .ok_or_else(|| malformed("tool call without name"))?;
                let raw = function.get("arguments").and_then(Value::as_str).unwrap_or("{}");
                let arguments: Map<String, Value> = if raw.trim().is_empty() {
                    Map::new()
                } else {
                    serde_json::from_str(raw).map_err(|e| malformed(&format!("tool arguments: {e}")))?
                };
                out.push(ToolCall {
                    id: id.to_owned(),
                    name: name.to_owned(),
                    arguments,
                });
            }
            return Ok(LvlmResponse::ToolCalls(out));
        }
    }
    let content = message.get("content").and_then(Value::as_str).unwrap_or_default();
    if content.is_empty() && choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Ok(LvlmResponse::FinalText(
            "The model declined to answer this request.".into(),
        ));
    }
    Ok(LvlmResponse::FinalText(content.to_owned()))
}

#[async_trait]
impl LvlmProvider for OpenAiProvider {
    fn provider_tag(&self) -> &str {
        "openai"
    }

    async fn generate(&self, request: &GenerateRequest) -> Result<LvlmResponse, LvlmError> {
        let body = request_body(&self.config.model, request);
        let mut last_error = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                tokio::time::sleep(Duration::from_millis(250 << attempt.min(5))).await;
            }
            let mut builder = self.client.post(self.endpoint()).json(&body);
            if let Some(key) = &self.config.api_key {
                builder = builder.bearer_auth(key);
            }
            let response = match builder.send().await {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            let text = response
                .text()
                .await
                .map_err(|e| LvlmError::ProviderUnreachable(e.to_string()))?;
            if status.is_server_error() || status.as_u16() == 429 {
                last_error = format!("server returned {status}");
                continue;
            }
            let parsed: Value = serde_json::from_str(&text)
                .map_err(|e| LvlmError::MalformedResponse(format!("{status}: {e}")))?;
            if !status.is_success() {
                // content policy rejections arrive as 400s on some providers
                let error = parsed.get("error").cloned().unwrap_or(Value::Null);
                let code = error.get("code").and_then(Value::as_str).unwrap_or_default();
                let message = error.get("message").and_then(Value::as_str).unwrap_or_default();
                if code.contains("content_policy") || code.contains("content_filter") {
                    return Ok(LvlmResponse::FinalText(message.to_owned()));
                }
                return Err(LvlmError::MalformedResponse(format!("{status}: {message}")));
            }
            return parse_response(&parsed);
        }
        Err(LvlmError::ProviderUnreachable(last_error))
    }
}
