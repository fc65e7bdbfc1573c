//! Image analysis through the chat model: VQA, captioning, OCR, and object
//! detection. Each operation is a single model call with its own system
//! instruction; detection output is parsed and validated here.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use curio_core::embedding::ImageData;

use crate::lvlm::{ChatPart, ChatTurn, GenerateRequest, LvlmGateway, LvlmResponse};
use crate::prompts;
use crate::tools::{ToolError, ToolErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub name: String,
    pub description: String,
    pub bounding_box: BoundingBox,
}

/// Pulls the JSON payload out of a model answer: the first fenced block if
/// there is one, otherwise the outermost `[...]` span.
fn extract_json(text: &str) -> Option<&str> {
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1)?;
        let body = &after[body_start..];
        let end = body.find("```")?;
        return Some(body[..end].trim());
    }
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    (end >= start).then(|| &text[start..=end])
}

fn pixel(object: &Value, key: &str) -> Result<u32, String> {
    let v = object
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("bounding_box.{key} must be a number"))?;
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(format!("bounding_box.{key} must be a non-negative integer, got {v}"));
    }
    Ok(v as u32)
}

/// Parses a detection answer. With `dims` (width, height) every box must lie
/// inside the image.
pub fn parse_detections(text: &str, dims: Option<(u32, u32)>) -> Result<Vec<DetectedObject>, String> {
    let json = extract_json(text).ok_or("no JSON array found")?;
    let value: Value = serde_json::from_str(json).map_err(|e| format!("invalid JSON: {e}"))?;
    let items = value.as_array().ok_or("expected a JSON array of objects")?;
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let field = |key: &str| -> Result<String, String> {
            item.get(key)
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or_else(|| format!("object {i}: {key} must be a string"))
        };
        let name = field("name")?;
        if name.trim().is_empty() {
            return Err(format!("object {i}: empty name"));
        }
        let description = field("description")?;
        let bbox = item
            .get("bounding_box")
            .filter(|b| b.is_object())
            .ok_or_else(|| format!("object {i}: missing bounding_box"))?;
        let b = BoundingBox {
            x: pixel(bbox, "x").map_err(|e| format!("object {i}: {e}"))?,
            y: pixel(bbox, "y").map_err(|e| format!("object {i}: {e}"))?,
            width: pixel(bbox, "width").map_err(|e| format!("object {i}: {e}"))?,
            height: pixel(bbox, "height").map_err(|e| format!("object {i}: {e}"))?,
        };
        if b.width == 0 || b.height == 0 {
            return Err(format!("object {i}: empty bounding box"));
        }
        if let Some((w, h)) = dims {
            if u64::from(b.x) + u64::from(b.width) > u64::from(w) || u64::from(b.y) + u64::from(b.height) > u64::from(h) {
                return Err(format!("object {i}: bounding box exceeds the {w}x{h} image"));
            }
        }
        out.push(DetectedObject {
            name,
            description,
            bounding_box: b,
        });
    }
    Ok(out)
}

fn metadata_block(metadata: &Value) -> String {
    if metadata.as_object().is_some_and(|m| m.is_empty()) || metadata.is_null() {
        "Metadata: none".to_owned()
    } else {
        format!(
            "Metadata:\n{}",
            serde_json::to_string_pretty(metadata).expect("json value serializes")
        )
    }
}

async fn ask(
    gateway: &LvlmGateway,
    model: &str,
    instruction: &str,
    history: Vec<ChatTurn>,
) -> Result<String, ToolError> {
    let request = GenerateRequest::new(instruction, history);
    match gateway.generate(model, &request).await {
        Ok(LvlmResponse::FinalText(text)) => Ok(text),
        Ok(LvlmResponse::ToolCalls(_)) => Err(ToolError::new(
            ToolErrorKind::MalformedModelOutput,
            "model answered an image request with tool calls",
        )),
        Err(e) => Err(ToolError::new(ToolErrorKind::ProviderFailed, e.to_string())),
    }
}

fn image_turn(image: &ImageData, text: String) -> ChatTurn {
    ChatTurn::user(vec![ChatPart::Image(image.clone()), ChatPart::Text(text)])
}

pub async fn vqa(
    gateway: &LvlmGateway,
    model: &str,
    image: &ImageData,
    question: &str,
    metadata: &Value,
) -> Result<String, ToolError> {
    let text = format!("Question: {question}\n\n{}", metadata_block(metadata));
    ask(gateway, model, prompts::IMAGE_VQA, vec![image_turn(image, text)]).await
}

pub async fn caption(
    gateway: &LvlmGateway,
    model: &str,
    image: &ImageData,
    metadata: &Value,
    concise: bool,
) -> Result<String, ToolError> {
    let request = if concise {
        "Generate a concise caption for this image."
    } else {
        "Generate a detailed caption for this image."
    };
    let text = format!("{request}\n\n{}", metadata_block(metadata));
    ask(gateway, model, prompts::IMAGE_CAPTION, vec![image_turn(image, text)]).await
}

pub async fn ocr(gateway: &LvlmGateway, model: &str, image: &ImageData, metadata: &Value) -> Result<String, ToolError> {
    let text = format!("Extract all text from this image.\n\n{}", metadata_block(metadata));
    ask(gateway, model, prompts::IMAGE_OCR, vec![image_turn(image, text)]).await
}

/// One model call, plus one corrective retry if the answer does not parse.
pub async fn detect_objects(
    gateway: &LvlmGateway,
    model: &str,
    image: &ImageData,
    metadata: &Value,
) -> Result<Vec<DetectedObject>, ToolError> {
    let dims = image.dimensions();
    let first_turn = image_turn(
        image,
        format!("Detect the prominent objects in this image.\n\n{}", metadata_block(metadata)),
    );
    let answer = ask(gateway, model, prompts::IMAGE_DETECT_OBJECTS, vec![first_turn.clone()]).await?;
    let problem = match parse_detections(&answer, dims) {
        Ok(objects) => return Ok(objects),
        Err(problem) => problem,
    };
    tracing::debug!(%problem, "detection output rejected, retrying once");
    let retry = vec![
        first_turn,
        ChatTurn::assistant_text(answer),
        ChatTurn::user_text(format!(
            "Your answer could not be used ({problem}). Reply with only the JSON array in the required output format."
        )),
    ];
    let answer = ask(gateway, model, prompts::IMAGE_DETECT_OBJECTS, retry).await?;
    parse_detections(&answer, dims).map_err(|problem| {
        ToolError::new(
            ToolErrorKind::MalformedModelOutput,
            format!("object detection output unusable after retry: {problem}"),
        )
    })
}
