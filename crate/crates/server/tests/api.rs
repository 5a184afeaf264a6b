use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tcdst_server::{router, AppState};
use tower::ServiceExt;

async fn call(
    app: &axum::Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn small_encoder() -> Value {
    json!({"num_layers": 1, "hidden_size": 16, "num_heads": 2, "ffn_size": 32})
}

#[tokio::test]
async fn health_reports_ok() {
    let app = router(AppState::new());
    let (status, body) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn generate_and_analyze() {
    let app = router(AppState::new());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");

    let (status, inline) = call(
        &app,
        Method::POST,
        "/v1/generate",
        Some(json!({"schema": {"builtin": "toy"}, "dialogues": 100, "rho": 1.0, "seed": 3})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(inline["dialogues"], 100);
    assert_eq!(inline["corpus"]["dialogues"].as_array().unwrap().len(), 100);
    assert!(inline["cramers_v"].as_f64().unwrap() >= 0.95);

    let req =
        json!({"schema": {"builtin": "toy"}, "dialogues": 100, "rho": 1.0, "seed": 3, "out": path});
    let (status, written) = call(&app, Method::POST, "/v1/generate", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    assert!(written.get("corpus").is_none());
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(on_disk, inline["corpus"]);

    let (status, report) = call(
        &app,
        Method::POST,
        "/v1/analyze",
        Some(json!({"corpus": path})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["dialogues"], 100);
    assert_eq!(report["cramers_v"], inline["cramers_v"]);

    let empty = dir.path().join("empty.json");
    let req = json!({"schema": {"builtin": "travel"}, "dialogues": 0, "rho": 0.5, "out": empty});
    let (status, body) = call(&app, Method::POST, "/v1/generate", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["turns"], 0);
    assert!(body["cramers_v"].is_null());
}

#[tokio::test]
async fn errors_carry_kind_and_status() {
    let app = router(AppState::new());
    let (status, body) = call(
        &app,
        Method::POST,
        "/v1/generate",
        Some(json!({"schema": {"builtin": "toy"}, "dialogues": 1, "rho": 2.0})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["kind"], "configuration");
    assert_eq!(body["error"]["validation"], true);

    let (status, body) = call(
        &app,
        Method::POST,
        "/v1/eval",
        Some(json!({"checkpoint": "/nonexistent/x", "corpus": "/nonexistent/y"})),
    )
    .await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(body["error"]["kind"], "io");

    let (status, body) = call(&app, Method::POST, "/v1/analyze", Some(json!({"path": 3}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["kind"], "request");

    let (status, body) = call(
        &app,
        Method::POST,
        "/v1/sessions/nope/turns",
        Some(json!({"user": "hi"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["validation"], false);
}

#[tokio::test]
async fn gradcheck_small_model() {
    let app = router(AppState::new());
    let req = json!({"num_layers": 1, "hidden_size": 8, "num_heads": 2, "ffn_size": 16, "max_coords_per_param": 4});
    let (status, body) = call(&app, Method::POST, "/v1/gradcheck", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["passed"], true);
}

#[tokio::test]
async fn train_eval_and_session_lifecycle() {
    let state = AppState::new();
    let app = router(state.clone());
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("train.json");
    let ckpt = dir.path().join("model.ckpt");
    let req =
        json!({"schema": {"builtin": "toy"}, "dialogues": 4, "rho": 1.0, "seed": 1, "out": corpus});
    assert_eq!(
        call(&app, Method::POST, "/v1/generate", Some(req)).await.0,
        StatusCode::OK
    );

    let config = json!({
        "variant": "bdst-j", "epochs": 2, "batch_size": 8, "seed": 1,
        "encoder": small_encoder(), "train_corpus": corpus, "checkpoint": ckpt
    });
    let (status, summary) = call(&app, Method::POST, "/v1/train", Some(config)).await;
    assert_eq!(status, StatusCode::OK, "{summary}");
    assert_eq!(summary["epochs"], 2);

    let (status, report) = call(
        &app,
        Method::POST,
        "/v1/eval",
        Some(json!({"checkpoint": ckpt, "corpus": corpus})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report, summary["best"]);
    let (_, oracle) = call(
        &app,
        Method::POST,
        "/v1/eval",
        Some(json!({"checkpoint": ckpt, "corpus": corpus, "oracle": true})),
    )
    .await;
    assert_eq!(oracle["joint_goal"], 1.0);

    let (status, info) = call(
        &app,
        Method::POST,
        "/v1/sessions",
        Some(json!({"checkpoint": ckpt})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(info["variant"], "bdst-j");
    let id = info["id"].as_str().unwrap().to_string();
    assert_eq!(state.session_count(), 1);

    let (status, turn) = call(
        &app,
        Method::POST,
        &format!("/v1/sessions/{id}/turns"),
        Some(json!({"system": "", "user": "i want to find a hotel"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(turn["turn"], 1);
    assert!(turn["output"]["intent"]["label"].is_string());
    assert_eq!(turn["output"]["slots"].as_array().unwrap().len(), 2);
    assert_eq!(turn["output"]["categorical"].as_array().unwrap().len(), 2);

    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/v1/sessions/{id}/turns"),
        Some(json!({"user": "  "})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let (_, st) = call(&app, Method::GET, &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(st["turns"], 1);
    assert_eq!(st["state"], turn["state"]);

    let (status, st) = call(
        &app,
        Method::POST,
        &format!("/v1/sessions/{id}/reset"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(st["state"], json!({}));
    assert_eq!(st["turns"], 0);

    assert_eq!(
        call(&app, Method::DELETE, &format!("/v1/sessions/{id}"), None)
            .await
            .0,
        StatusCode::NO_CONTENT
    );
    assert_eq!(
        call(&app, Method::GET, &format!("/v1/sessions/{id}"), None)
            .await
            .0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(state.session_count(), 0);
}
