//! The `/v1` HTTP API.

use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use curio_agent::agent::{run_agentic_loop, upload_id, LoopOutcome, MemoryTrace, ToolOutcome};
use curio_agent::lvlm::ModelInfo;
use curio_agent::tools::ToolErrorKind;
use curio_core::embedding::{ImageData, MediaType};

use crate::cards::{resolve_all, RenderPayload};
use crate::error::ApiError;
use crate::state::{AppState, TranscriptEntry};

type AppResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/sessions", post(create_session))
        .route(
            "/sessions/{id}/messages",
            post(post_message).layer(DefaultBodyLimit::disable()),
        )
        .route("/sessions/{id}/history", get(history))
        .route("/images/{name}", get(image))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state);
    let app = Router::new().nest("/v1", api);
    if cors_origins.is_empty() {
        return app;
    }
    let origins: Vec<HeaderValue> = cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    app.layer(
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(origins))
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE]),
    )
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    records: usize,
    collections: usize,
    embedder: String,
    models: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> AppResult<Json<Health>> {
    let toolbox = state.ready()?;
    let store = &toolbox.corpus.store;
    Ok(Json(Health {
        status: "ok",
        records: store.records().len(),
        collections: store.list_collections().len(),
        embedder: toolbox.corpus.lock.embedder.clone(),
        models: state.gateway.list_models().len(),
    }))
}

#[derive(Serialize)]
struct Models {
    models: Vec<ModelInfo>,
    default: String,
}

async fn models(State(state): State<Arc<AppState>>) -> Json<Models> {
    Json(Models {
        models: state.gateway.list_models(),
        default: state.gateway.default_model().to_owned(),
    })
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    model_id: Option<String>,
}

#[derive(Serialize)]
struct SessionCreated {
    session_id: String,
    model_id: String,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> AppResult<Response> {
    let request: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    let model = request.model_id.unwrap_or_else(|| state.gateway.default_model().to_owned());
    if !state.gateway.contains(&model) {
        return Err(ApiError::unknown_model(&model));
    }
    let session_id = state.create_session(&model);
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id, model_id: model })).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonImage {
    media_type: String,
    /// Base64 of the image bytes.
    data: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonMessage {
    #[serde(default)]
    text: String,
    #[serde(default)]
    images: Vec<JsonImage>,
}

struct IncomingMessage {
    text: String,
    images: Vec<ImageData>,
}

fn check_image(bytes: Vec<u8>, media_type: &str, limit: usize) -> AppResult<ImageData> {
    if bytes.len() > limit {
        return Err(ApiError::too_large(limit));
    }
    let media_type = MediaType::parse(media_type)
        .map_err(|_| ApiError::unsupported_media_type(format!("{media_type} is not a supported image type")))?;
    let image = ImageData::new(bytes, media_type);
    if image.dimensions().is_none() {
        return Err(ApiError::bad_request(format!("image is not a valid {media_type}")));
    }
    Ok(image)
}

/// Reads a message from a JSON or multipart body, enforcing the upload cap.
async fn read_message(request: Request, limit: usize) -> AppResult<IncomingMessage> {
    let (parts, body) = request.into_parts();
    // room for base64 expansion and form framing
    let body_limit = limit / 3 * 4 + 64 * 1024;
    let bytes = axum::body::to_bytes(body, body_limit)
        .await
        .map_err(|_| ApiError::too_large(limit))?;
    let content_type = parts
        .headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();

    if content_type.starts_with("multipart/form-data") {
        let request = Request::from_parts(parts, Body::from(bytes));
        let mut form = Multipart::from_request(request, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let mut message = IncomingMessage {
            text: String::new(),
            images: Vec::new(),
        };
        while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.body_text()))? {
            match field.name().unwrap_or("") {
                "text" => message.text = field.text().await.map_err(|e| ApiError::bad_request(e.body_text()))?,
                "image" => {
                    let media_type = field
                        .content_type()
                        .map(str::to_owned)
                        .filter(|t| t != "application/octet-stream")
                        .or_else(|| field.file_name().and_then(MediaType::from_file_name).map(|m| m.as_str().to_owned()))
                        .unwrap_or_default();
                    let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
                    message.images.push(check_image(data.to_vec(), &media_type, limit)?);
                }
                other => return Err(ApiError::bad_request(format!("unexpected form field {other:?}"))),
            }
        }
        Ok(message)
    } else if content_type.starts_with("application/json") {
        let body: JsonMessage = serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let mut images = Vec::with_capacity(body.images.len());
        for image in body.images {
            let data = base64::engine::general_purpose::STANDARD
                .decode(image.data.as_bytes())
                .map_err(|e| ApiError::bad_request(format!("image data is not base64: {e}")))?;
            images.push(check_image(data, &image.media_type, limit)?);
        }
        Ok(IncomingMessage {
            text: body.text,
            images,
        })
    } else {
        Err(ApiError::unsupported_media_type(
            "send application/json or multipart/form-data",
        ))
    }
}

#[derive(Serialize)]
struct ToolCallView {
    id: String,
    name: String,
    arguments: Map<String, Value>,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_kind: Option<ToolErrorKind>,
}

#[derive(Serialize)]
struct AssistantMessage {
    role: &'static str,
    markdown: String,
    render: Vec<RenderPayload>,
}

#[derive(Serialize)]
struct MessageReply {
    session_id: String,
    trace_id: String,
    message: AssistantMessage,
    outcome: LoopOutcome,
    iterations: usize,
    tool_calls: Vec<ToolCallView>,
    /// Tags the model emitted for ids that do not exist; removed from the text.
    dropped_tags: Vec<String>,
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    request: Request,
) -> AppResult<Json<MessageReply>> {
    let slot = state.session(&id)?;
    let toolbox = state.ready()?.clone();
    let message = read_message(request, state.limits.max_upload_bytes).await?;
    if message.text.trim().is_empty() && message.images.is_empty() {
        return Err(ApiError::bad_request("a message needs text or an image"));
    }
    let mut data = slot.data.try_lock().map_err(|_| ApiError::busy())?;
    let now = state.clock.now_ms();
    slot.touch(now);
    data.session.touch(now);

    let attachments: Vec<String> = message.images.iter().map(upload_id).collect();
    let turn = data.session.user_turn(&message.text, message.images);
    let trace_id = uuid::Uuid::new_v4().simple().to_string();
    data.transcript.push(TranscriptEntry {
        role: "user",
        markdown: message.text,
        attachments,
        tags: Vec::new(),
        trace_id: None,
        created_at_ms: now,
    });

    let sink = MemoryTrace::default();
    let reply = run_agentic_loop(&mut data.session, turn, &toolbox, &state.agent, &sink)
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    state.write_trace(&trace_id, &sink.events());

    let done = state.clock.now_ms();
    slot.touch(done);
    data.session.touch(done);
    data.transcript.push(TranscriptEntry {
        role: "assistant",
        markdown: reply.markdown_text.clone(),
        attachments: Vec::new(),
        tags: reply.render_tags.clone(),
        trace_id: Some(trace_id.clone()),
        created_at_ms: done,
    });
    tracing::info!(session = %id, trace = %trace_id, outcome = ?reply.outcome, iterations = reply.iterations, "message answered");

    let tool_calls = reply
        .trace
        .iter()
        .map(|entry| {
            let (status, error_kind) = match &entry.outcome {
                ToolOutcome::Ok { .. } => ("ok", None),
                ToolOutcome::Error { error } => ("error", Some(error.error_kind)),
            };
            ToolCallView {
                id: entry.call.id.clone(),
                name: entry.call.name.clone(),
                arguments: entry.call.arguments.clone(),
                status,
                error_kind,
            }
        })
        .collect();
    Ok(Json(MessageReply {
        session_id: id,
        trace_id,
        message: AssistantMessage {
            role: "assistant",
            render: resolve_all(&toolbox.corpus.store, &reply.render_tags),
            markdown: reply.markdown_text,
        },
        outcome: reply.outcome,
        iterations: reply.iterations,
        tool_calls,
        dropped_tags: reply.dropped_tags.iter().map(ToString::to_string).collect(),
    }))
}

#[derive(Serialize)]
struct HistoryTurn {
    #[serde(flatten)]
    entry: TranscriptEntry,
    render: Vec<RenderPayload>,
}

#[derive(Serialize)]
struct History {
    session_id: String,
    model_id: String,
    turns: Vec<HistoryTurn>,
}

async fn history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<History>> {
    let slot = state.session(&id)?;
    let toolbox = state.ready()?;
    let data = slot.data.try_lock().map_err(|_| ApiError::busy())?;
    slot.touch(state.clock.now_ms());
    let turns = data
        .transcript
        .iter()
        .map(|entry| HistoryTurn {
            render: resolve_all(&toolbox.corpus.store, &entry.tags),
            entry: entry.clone(),
        })
        .collect();
    Ok(Json(History {
        session_id: id,
        model_id: data.session.model.clone(),
        turns,
    }))
}

async fn image(State(state): State<Arc<AppState>>, Path(name): Path<String>) -> AppResult<Response> {
    let store = &state.ready()?.corpus.store;
    let path = store
        .image_path(&name)
        .ok_or_else(|| ApiError::not_found(format!("image {name} not found")))?;
    let media_type =
        MediaType::from_file_name(&name).ok_or_else(|| ApiError::not_found(format!("image {name} not found")))?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ApiError::not_found(format!("image {name} not found")),
        _ => ApiError::internal(format!("cannot read image {name}: {e}")),
    })?;
    Ok((
        [
            (header::CONTENT_TYPE, media_type.as_str()),
            (header::CACHE_CONTROL, "public, max-age=86400"),
        ],
        bytes,
    )
        .into_response())
}
