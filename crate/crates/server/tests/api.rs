mod common;

use std::collections::HashSet;
use std::sync::Arc;

use base64::Engine as _;
use common::*;
use curio_agent::agent::upload_id;
use curio_core::embedding::{ImageData, MediaType};
use serde_json::{json, Value};

async fn body(res: reqwest::Response) -> Value {
    res.json().await.unwrap()
}

#[tokio::test]
async fn sessions_and_models() {
    let fx = fixture(42, 3, 12).await;
    let server = spawn(&fx, gateway(vec![("stub", Arc::new(EchoProvider))]), Options::default()).await;

    let models = body(server.client.get(server.url("/models")).send().await.unwrap()).await;
    assert_eq!(models["models"].as_array().unwrap().len(), 1);
    assert_eq!(models["models"][0]["id"], "stub");
    assert_eq!(models["default"], "stub");

    let a = server.create_session("stub").await;
    let b = server.create_session("stub").await;
    assert_ne!(a, b);
    assert!(a.len() >= 32);

    // no body picks the default model
    let res = server.client.post(server.url("/sessions")).send().await.unwrap();
    assert_eq!(res.status(), 201);
    assert_eq!(body(res).await["model_id"], "stub");

    let res = server
        .client
        .post(server.url("/sessions"))
        .json(&json!({"model_id": "gpt-9"}))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), 400);
    let err = body(res).await;
    assert_eq!(err["error"], "unknown_model");
    assert!(err["detail"].is_string());

    let history = body(server.client.get(server.url(&format!("/sessions/{a}/history"))).send().await.unwrap()).await;
    assert_eq!(history["turns"], json!([]));
    assert_eq!(history["model_id"], "stub");

    let res = server.client.get(server.url("/sessions/nope/history")).send().await.unwrap();
    assert_eq!(res.status(), 404);
    assert_eq!(body(res).await["error"], "session_not_found");
    let res = server.client.get(server.url("/teleport")).send().await.unwrap();
    assert_eq!(res.status(), 404);
    assert_eq!(body(res).await["error"], "not_found");
}

#[tokio::test]
async fn images_are_served_verbatim() {
    let fx = fixture(42, 3, 12).await;
    let server = spawn(&fx, gateway(vec![("stub", Arc::new(EchoProvider))]), Options::default()).await;
    let record = &fx.corpus.store.records()[0];
    let res = server.client.get(server.url(&format!("/images/{}", record.image_name))).send().await.unwrap();
    assert_eq!(res.status(), 200);
    assert_eq!(res.headers()["content-type"], "image/png");
    let bytes = res.bytes().await.unwrap();
    let on_disk = std::fs::read(fx.corpus.store.image_path(&record.image_name).unwrap()).unwrap();
    assert_eq!(bytes.as_ref(), on_disk.as_slice());

    for missing in ["missing.png", "..%2Fstore%2Frecords.db", "%2Fetc%2Fpasswd", "records.db"] {
        let res = server.client.get(server.url(&format!("/images/{missing}"))).send().await.unwrap();
        assert_eq!(res.status(), 404, "{missing}");
        assert_eq!(body(res).await["error"], "not_found");
    }
}

#[tokio::test]
async fn health_waits_for_the_store() {
    let fx = fixture(1, 2, 4).await;
    let gw = gateway(vec![("stub", Arc::new(EchoProvider))]);
    let server = spawn(
        &fx,
        gw.clone(),
        Options {
            install: false,
            ..Options::default()
        },
    )
    .await;
    let res = server.client.get(server.url("/health")).send().await.unwrap();
    assert_eq!(res.status(), 503);
    assert_eq!(body(res).await["error"], "not_ready");
    let id = server.create_session("stub").await;
    assert_eq!(server.say(&id, "hi").await.status(), 503);

    server.state.install(curio_agent::tools::Toolbox::new(
        fx.corpus.clone(),
        Arc::new(curio_core::embedding::StubEmbedder::new(DIM)),
        gw,
    ));
    let res = server.client.get(server.url("/health")).send().await.unwrap();
    assert_eq!(res.status(), 200);
    let health = body(res).await;
    assert_eq!(health["records"], 4);
    assert_eq!(health["collections"], 2);
}

#[tokio::test]
async fn message_round_trip_with_cards() {
    let fx = fixture(42, 3, 12).await;
    let record = fx.corpus.store.records()[5].clone();
    let collection = fx.corpus.store.parent_of(&record).clone();
    let script = json!([
        {"tool_calls": [{"id": "c1", "name": "lexical_search_records", "arguments": {"query": "quartz", "k": 3}}]},
        {"final_text": format!(
            "Found it: <FundusRecord murag_id='{}' /> in <FundusCollection murag_id='{}' /> <FundusRecord murag_id='ghost' />",
            record.murag_id, collection.murag_id
        )}
    ]);
    let server = spawn(&fx, gateway(vec![("scripted", scripted(&script.to_string()))]), Options::default()).await;
    let id = server.create_session("scripted").await;
    let res = server.say(&id, "Show me quartz").await;
    assert_eq!(res.status(), 200);
    let reply = body(res).await;
    assert_eq!(reply["outcome"], "completed");
    assert_eq!(reply["iterations"], 2);
    assert_eq!(reply["tool_calls"][0]["name"], "lexical_search_records");
    assert_eq!(reply["tool_calls"][0]["status"], "ok");
    assert_eq!(reply["dropped_tags"], json!(["<FundusRecord murag_id='ghost' />"]));
    assert!(reply["trace_id"].as_str().unwrap().len() >= 32);
    let render = reply["message"]["render"].as_array().unwrap();
    assert_eq!(render.len(), 2);
    assert_eq!(render[0]["kind"], "record");
    assert_eq!(render[0]["murag_id"], record.murag_id.as_str());
    assert_eq!(render[0]["title"], fx.corpus.store.record_title(&record));
    assert_eq!(render[0]["image_url"], format!("/v1/images/{}", record.image_name));
    assert_eq!(render[0]["collection"]["collection_name"], collection.collection_name);
    assert_eq!(render[1]["kind"], "collection");
    assert_eq!(render[1]["title"], collection.title);
    assert_eq!(render[1]["record_count"], 4);
    assert!(!reply["message"]["markdown"].as_str().unwrap().contains("ghost"));

    // the image URL from the card is fetchable
    let img = server.client.get(format!("{}{}", server.base, render[0]["image_url"].as_str().unwrap())).send().await.unwrap();
    assert_eq!(img.status(), 200);

    let history = body(server.client.get(server.url(&format!("/sessions/{id}/history"))).send().await.unwrap()).await;
    let turns = history["turns"].as_array().unwrap();
    assert_eq!(turns.len(), 2);
    assert_eq!(turns[0]["role"], "user");
    assert_eq!(turns[0]["markdown"], "Show me quartz");
    assert_eq!(turns[1]["role"], "assistant");
    assert_eq!(turns[1]["render"], reply["message"]["render"]);
    assert_eq!(turns[1]["trace_id"], reply["trace_id"]);
}

#[tokio::test]
async fn expired_sessions_are_gone() {
    let fx = fixture(1, 2, 4).await;
    let server = spawn(&fx, gateway(vec![("stub", Arc::new(EchoProvider))]), Options::default()).await;
    let id = server.create_session("stub").await;
    server.clock.advance(TTL_MS - 1);
    assert_eq!(server.say(&id, "still here").await.status(), 200);
    // the message refreshed the session
    server.clock.advance(TTL_MS - 1);
    assert_eq!(server.client.get(server.url(&format!("/sessions/{id}/history"))).send().await.unwrap().status(), 200);
    server.clock.advance(TTL_MS);
    let res = server.say(&id, "too late").await;
    assert_eq!(res.status(), 404);
    assert_eq!(body(res).await["error"], "session_not_found");
    assert_eq!(server.state.session_count(), 0);

    // idle sessions are swept when new ones are created
    for _ in 0..3 {
        server.create_session("stub").await;
    }
    server.clock.advance(TTL_MS);
    server.create_session("stub").await;
    assert_eq!(server.state.session_count(), 1);
}

fn png(width: u32, height: u32) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    let img = image_rgb(width, height);
    img.write_to(&mut out, ::image::ImageFormat::Png).unwrap();
    out.into_inner()
}

fn image_rgb(width: u32, height: u32) -> ::image::DynamicImage {
    let mut buf = ::image::RgbImage::new(width, height);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        *p = ::image::Rgb([(x * 7) as u8, (y * 13) as u8, ((x ^ y) * 3) as u8]);
    }
    ::image::DynamicImage::ImageRgb8(buf)
}

#[tokio::test]
async fn upload_limits_and_types() {
    let fx = fixture(1, 2, 4).await;
    let limit = 4096;
    let server = spawn(
        &fx,
        gateway(vec![("stub", Arc::new(EchoProvider))]),
        Options {
            max_upload_bytes: limit,
            ..Options::default()
        },
    )
    .await;
    let id = server.create_session("stub").await;
    let url = server.url(&format!("/sessions/{id}/messages"));

    let big = png(200, 200);
    assert!(big.len() > limit);
    let res = server
        .client
        .post(&url)
        .json(&json!({"text": "look", "images": [{"media_type": "image/png", "data": base64::engine::general_purpose::STANDARD.encode(&big)}]}))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), 413);
    assert_eq!(body(res).await["error"], "payload_too_large");

    let form = reqwest::multipart::Form::new().text("text", "look").part(
        "image",
        reqwest::multipart::Part::bytes(big.clone()).file_name("big.png").mime_str("image/png").unwrap(),
    );
    let res = server.client.post(&url).multipart(form).send().await.unwrap();
    assert_eq!(res.status(), 413);

    // far beyond the cap: rejected while reading the body
    let huge = vec![0u8; limit * 4];
    let form = reqwest::multipart::Form::new().part(
        "image",
        reqwest::multipart::Part::bytes(huge).file_name("huge.png").mime_str("image/png").unwrap(),
    );
    assert_eq!(server.client.post(&url).multipart(form).send().await.unwrap().status(), 413);

    let form = reqwest::multipart::Form::new().part(
        "image",
        reqwest::multipart::Part::bytes(b"GIF89a....".to_vec()).file_name("a.gif").mime_str("image/gif").unwrap(),
    );
    let res = server.client.post(&url).multipart(form).send().await.unwrap();
    assert_eq!(res.status(), 415);
    assert_eq!(body(res).await["error"], "unsupported_media_type");

    let res = server.client.post(&url).body("hello").header("content-type", "text/plain").send().await.unwrap();
    assert_eq!(res.status(), 415);

    let res = server.client.post(&url).json(&json!({"text": "   "})).send().await.unwrap();
    assert_eq!(res.status(), 400);
    let res = server
        .client
        .post(&url)
        .json(&json!({"images": [{"media_type": "image/png", "data": "!!!"}]}))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), 400);
    let res = server
        .client
        .post(&url)
        .json(&json!({"images": [{"media_type": "image/png", "data": "aGVsbG8="}]}))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), 400, "bytes that do not decode as PNG");

    // the session is unaffected by rejected uploads
    assert_eq!(server.say(&id, "ok").await.status(), 200);
}

#[tokio::test]
async fn multipart_image_reaches_the_tools() {
    let fx = fixture(5, 2, 6).await;
    let record = fx.corpus.store.records()[4].clone();
    let bytes = std::fs::read(fx.corpus.store.image_path(&record.image_name).unwrap()).unwrap();
    let upload = upload_id(&ImageData::new(bytes.clone(), MediaType::Png));
    let script = json!([
        {"tool_calls": [{"id": "c1", "name": "similarity_search_records_by_image", "arguments": {"image_id": upload, "k": 1}}]},
        {"final_text": format!("<FundusRecord murag_id='{}' />", record.murag_id)}
    ]);
    let server = spawn(&fx, gateway(vec![("scripted", scripted(&script.to_string()))]), Options::default()).await;
    let id = server.create_session("scripted").await;
    let form = reqwest::multipart::Form::new().text("text", "Find similar objects").part(
        "image",
        reqwest::multipart::Part::bytes(bytes).file_name("photo.png").mime_str("image/png").unwrap(),
    );
    let res = server
        .client
        .post(server.url(&format!("/sessions/{id}/messages")))
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), 200);
    let reply = body(res).await;
    assert_eq!(reply["tool_calls"][0]["status"], "ok");
    assert_eq!(reply["message"]["render"][0]["murag_id"], record.murag_id.as_str());

    let history = body(server.client.get(server.url(&format!("/sessions/{id}/history"))).send().await.unwrap()).await;
    assert_eq!(history["turns"][0]["attachments"], json!([upload]));
    assert_eq!(history["turns"][0]["markdown"], "Find similar objects");
}

#[tokio::test]
async fn overlapping_messages_conflict() {
    let fx = fixture(1, 2, 4).await;
    let gate = Arc::new(tokio::sync::Semaphore::new(0));
    let server = spawn(&fx, gateway(vec![("gate", Arc::new(GateProvider(gate.clone())))]), Options::default()).await;
    let id = server.create_session("gate").await;
    let other = server.create_session("gate").await;

    let first = {
        let client = server.client.clone();
        let url = server.url(&format!("/sessions/{id}/messages"));
        tokio::spawn(async move { client.post(url).json(&json!({"text": "first"})).send().await.unwrap() })
    };
    // wait until the first run holds the session
    for _ in 0..200 {
        let res = server.client.get(server.url(&format!("/sessions/{id}/history"))).send().await.unwrap();
        if res.status() == 409 {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
    let res = server.say(&id, "second").await;
    assert_eq!(res.status(), 409);
    assert_eq!(body(res).await["error"], "session_busy");

    // other sessions are not blocked
    let parallel = {
        let client = server.client.clone();
        let url = server.url(&format!("/sessions/{other}/messages"));
        tokio::spawn(async move { client.post(url).json(&json!({"text": "other"})).send().await.unwrap() })
    };
    gate.add_permits(2);
    assert_eq!(first.await.unwrap().status(), 200);
    assert_eq!(parallel.await.unwrap().status(), 200);
    gate.add_permits(1);
    assert_eq!(server.say(&id, "third").await.status(), 200);
}

#[tokio::test]
async fn concurrent_sessions_stay_isolated() {
    let fx = fixture(1, 2, 4).await;
    let server = Arc::new(spawn(&fx, gateway(vec![("echo", Arc::new(EchoProvider))]), Options::default()).await);
    let mut ids = Vec::new();
    for _ in 0..32 {
        ids.push(server.create_session("echo").await);
    }
    let tasks: Vec<_> = ids
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, id)| {
            let server = server.clone();
            tokio::spawn(async move {
                for m in 0..3 {
                    let marker = format!("marker-{i}-{m}");
                    let res = server.say(&id, &marker).await;
                    assert_eq!(res.status(), 200);
                    assert_eq!(body(res).await["message"]["markdown"], format!("echo: {marker}"));
                }
            })
        })
        .collect();
    futures::future::join_all(tasks).await.into_iter().for_each(|r| r.unwrap());

    for (i, id) in ids.iter().enumerate() {
        let history = body(server.client.get(server.url(&format!("/sessions/{id}/history"))).send().await.unwrap()).await;
        let turns = history["turns"].as_array().unwrap();
        assert_eq!(turns.len(), 6);
        let markers: HashSet<String> = turns
            .iter()
            .flat_map(|t| t["markdown"].as_str().unwrap().split_whitespace().map(str::to_owned))
            .filter(|w| w.starts_with("marker-"))
            .collect();
        let expected: HashSet<String> = (0..3).map(|m| format!("marker-{i}-{m}")).collect();
        assert_eq!(markers, expected);
    }
}

#[tokio::test]
async fn cors_and_trace_log() {
    let fx = fixture(1, 2, 4).await;
    let log = fx.dir.path().join("trace.jsonl");
    let server = spawn(
        &fx,
        gateway(vec![("stub", Arc::new(EchoProvider))]),
        Options {
            cors: vec!["http://localhost:5173".into()],
            trace_log: Some(log.clone()),
            ..Options::default()
        },
    )
    .await;
    let res = server
        .client
        .get(server.url("/models"))
        .header("origin", "http://localhost:5173")
        .send()
        .await
        .unwrap();
    assert_eq!(res.headers()["access-control-allow-origin"], "http://localhost:5173");
    let res = server.client.get(server.url("/models")).header("origin", "http://evil.example").send().await.unwrap();
    assert!(res.headers().get("access-control-allow-origin").is_none());

    let id = server.create_session("stub").await;
    let reply = body(server.say(&id, "hello").await).await;
    let lines: Vec<Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!lines.is_empty());
    assert!(lines.iter().all(|l| l["trace_id"] == reply["trace_id"] && l["session_id"] == id.as_str()));
    assert_eq!(lines.last().unwrap()["event"], "loop_finished");
}
