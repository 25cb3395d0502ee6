mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use clarify_service::config::EngineConfig;
use clarify_service::events::{EventLog, LogRecord};
use clarify_service::http::{router, AppState, Page};
use clarify_service::Engine;
use clarify_testkit::write_pipeline;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Api {
    app: Router,
    log: Arc<EventLog>,
    _dir: tempfile::TempDir,
}

fn api(engine: Engine, dir: tempfile::TempDir) -> Api {
    let log = Arc::new(EventLog::open(&engine.config().paths.event_log).unwrap());
    let app = router(AppState {
        engine: Arc::new(engine),
        log: log.clone(),
    });
    Api { app, log, _dir: dir }
}

fn trained() -> Api {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::trained_engine(dir.path(), 3);
    api(engine, dir)
}

fn untrained() -> Api {
    let dir = tempfile::tempdir().unwrap();
    let files = write_pipeline(&dir.path().join("data"), 3);
    let config: EngineConfig = common::config(&files, dir.path());
    api(Engine::load(config).unwrap(), dir)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn readmore(session: &str, count: usize) -> Value {
    json!({ "session": session, "set": "refuse_reject", "word": "refuse", "revealed_count": count })
}

#[tokio::test]
async fn lists_sets() {
    let api = untrained();
    let (status, body) = call(&api.app, "GET", "/sets", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = body
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["hard_difficult", "refuse_reject"]);
}

#[tokio::test]
async fn suggest_returns_k_examples_per_word() {
    let api = trained();
    let (status, body) = call(&api.app, "POST", "/suggest", Some(json!({ "set": "refuse_reject" }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["model_kind"], "bilstm");
    assert_eq!(body["k"], 5);
    for word in body["per_word"].as_array().unwrap() {
        let examples = word["examples"].as_array().unwrap();
        assert_eq!(examples.len(), 5);
        let scores: Vec<f64> = examples.iter().map(|e| e["score"].as_f64().unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[tokio::test]
async fn unknown_set_is_404() {
    let api = trained();
    let (status, body) = call(&api.app, "POST", "/suggest", Some(json!({ "set": "nope" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));
    let (status, _) = call(&api.app, "GET", "/examples/refuse_reject/hard?offset=1", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn untrained_models_are_503() {
    let api = untrained();
    let (status, body) = call(
        &api.app,
        "POST",
        "/suggest",
        Some(json!({ "set": "refuse_reject", "model": "gmm" })),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let api = untrained();
    let (status, _) = call(&api.app, "POST", "/suggest", Some(json!({ "sett": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(
        &api.app,
        "POST",
        "/suggest",
        Some(json!({ "set": "refuse_reject", "k": 0 })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&api.app, "GET", "/examples/refuse_reject/refuse?offset=x", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn readmore_pages_one_sentence_until_the_cap() {
    let api = trained();
    let (_, first) = call(
        &api.app,
        "POST",
        "/suggest",
        Some(json!({ "set": "refuse_reject", "k": 1 })),
    )
    .await;
    let top = first["per_word"][0]["examples"][0]["id"].clone();
    let mut seen = vec![top];
    for offset in 1..5 {
        let (status, body) = call(
            &api.app,
            "GET",
            &format!("/examples/refuse_reject/refuse?offset={offset}"),
            None,
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let page: Page = serde_json::from_value(body).unwrap();
        assert_eq!(page.offset, offset);
        assert_eq!(page.total, 5);
        assert_eq!(page.examples.len(), 1);
        seen.push(json!(page.examples[0].id));
    }
    let (_, full) = call(&api.app, "POST", "/suggest", Some(json!({ "set": "refuse_reject" }))).await;
    let expected: Vec<Value> = full["per_word"][0]["examples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["id"].clone())
        .collect();
    assert_eq!(seen, expected);
    let (status, _) = call(&api.app, "GET", "/examples/refuse_reject/refuse?offset=5", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn readmore_events_are_validated_and_logged() {
    let api = trained();
    let (status, _) = call(&api.app, "POST", "/events/readmore", Some(readmore("s1", 6))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&api.app, "POST", "/events/readmore", Some(readmore("s1", 0))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&api.app, "POST", "/events/readmore", Some(readmore("s1", 2))).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let records = api.log.records().unwrap();
    assert_eq!(records.len(), 1);
    assert!(matches!(&records[0], LogRecord::Readmore(e) if e.revealed_count == 2 && e.session == "s1"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_appends_stay_whole() {
    let api = untrained();
    let tasks: Vec<_> = (0..100)
        .map(|i| {
            let app = api.app.clone();
            tokio::spawn(async move {
                let session = format!("session-{i:03}-{}", "x".repeat(200));
                call(&app, "POST", "/events/readmore", Some(readmore(&session, 1 + i % 5)))
                    .await
                    .0
            })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::NO_CONTENT);
    }
    let text = std::fs::read_to_string(api.log.path()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 100);
    let mut sessions: Vec<String> = lines
        .iter()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["session"]
                .as_str()
                .unwrap()
                .to_owned()
        })
        .collect();
    sessions.sort();
    sessions.dedup();
    assert_eq!(sessions.len(), 100);
}

#[tokio::test]
async fn answers_round_trip_and_last_write_wins() {
    let api = untrained();
    let uri = "/answers?session=s1&set=refuse_reject";
    let (status, _) = call(&api.app, "GET", uri, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    for text in ["first try", "second try"] {
        let body = json!({ "session": "s1", "set": "refuse_reject", "text": text });
        let (status, _) = call(&api.app, "POST", "/answers", Some(body)).await;
        assert_eq!(status, StatusCode::NO_CONTENT);
    }
    let (status, body) = call(&api.app, "GET", uri, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["text"], "second try");
    let (status, _) = call(&api.app, "GET", "/answers?session=s2&set=refuse_reject", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let empty = json!({ "session": "s1", "set": "refuse_reject", "text": "  " });
    assert_eq!(
        call(&api.app, "POST", "/answers", Some(empty)).await.0,
        StatusCode::BAD_REQUEST
    );
    let unknown = json!({ "session": "s1", "set": "nope", "text": "x" });
    assert_eq!(
        call(&api.app, "POST", "/answers", Some(unknown)).await.0,
        StatusCode::NOT_FOUND
    );
}
