use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use lsdm_core::api::unflatten;
use lsdm_core::edit::lowest_z_mask;
use lsdm_core::gpnet::{Ablation, GpNet, HyperParams};
use lsdm_core::synth::{PromptSpec, Vocabulary};
use lsdm_server::{router, AppState};

const N: usize = 64;

fn app() -> Router {
    let hyper = HyperParams {
        points: N,
        steps: 8,
        ..HyperParams::default()
    };
    let model = GpNet::new(hyper, Ablation::Full, Vocabulary::grammar(), 3).unwrap();
    router(Arc::new(AppState::new(model, "test-hash".into())))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
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

async fn session(app: &Router, seed: u64) -> String {
    let (status, body) = call(app, "POST", "/api/sessions", Some(json!({ "generator_seed": seed }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[tokio::test]
async fn health_reports_checkpoint() {
    let app = app();
    let (status, body) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["checkpoint_hash"], "test-hash");
    assert_eq!(body["points"], N);
}

#[tokio::test]
async fn synthesize_returns_cloud_and_weights() {
    let app = app();
    let id = session(&app, 4).await;
    let (status, body) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/synthesize"),
        Some(json!({ "prompt": "place a desk to the right of me", "seed": 11 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(floats(&body["points"]).len(), N * 3);
    assert_eq!(floats(&body["guiding_points"]).len(), N * 3);
    let w = floats(&body["attention_weights"]);
    assert_eq!(w.len(), 3);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(body["seed"], 11);

    let (_, view) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(view["history"].as_array().unwrap().len(), 1);
    assert_eq!(view["scene"]["target"]["points"], body["points"]);
    assert_eq!(view["scene"]["prompt"], "place a desk to the right of me");

    let (status, last) = call(&app, "GET", &format!("/api/sessions/{id}/guidance"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(last, body);
}

#[tokio::test]
async fn identical_requests_give_identical_responses() {
    let app = app();
    let req = json!({ "prompt": "put a small chair to the left of me", "seed": 5 });
    let a = session(&app, 9).await;
    let b = session(&app, 9).await;
    let (_, ra) = call(&app, "POST", &format!("/api/sessions/{a}/synthesize"), Some(req.clone())).await;
    let (_, rb) = call(&app, "POST", &format!("/api/sessions/{b}/synthesize"), Some(req)).await;
    assert_eq!(ra, rb);
}

#[tokio::test]
async fn server_chosen_seed_is_echoed_and_replayable() {
    let app = app();
    let a = session(&app, 2).await;
    let (_, first) = call(
        &app,
        "POST",
        &format!("/api/sessions/{a}/synthesize"),
        Some(json!({ "prompt": "add a table in front of me" })),
    )
    .await;
    let seed = first["seed"].as_u64().unwrap();
    assert!(seed < 1 << 53);
    let b = session(&app, 2).await;
    let (_, replay) = call(
        &app,
        "POST",
        &format!("/api/sessions/{b}/synthesize"),
        Some(json!({ "prompt": "add a table in front of me", "seed": seed })),
    )
    .await;
    assert_eq!(first["points"], replay["points"]);
}

#[tokio::test]
async fn malformed_bodies_name_the_field() {
    let app = app();
    let id = session(&app, 1).await;
    let (status, body) = call(&app, "POST", &format!("/api/sessions/{id}/synthesize"), Some(json!({ "prompt": 5 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "prompt");

    let (status, body) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/edit"),
        Some(json!({ "op": "shrink", "prompt": "x", "target_id": "target" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "op");

    let (status, body) = call(&app, "POST", "/api/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "body");

    let (status, _) = call(&app, "POST", &format!("/api/sessions/{id}/synthesize"), Some(json!({ "prompt": "" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = app();
    let (status, body) = call(&app, "GET", "/api/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));
    let (status, _) = call(
        &app,
        "POST",
        "/api/sessions/nope/synthesize",
        Some(json!({ "prompt": "place a desk to the right of me" })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let id = session(&app, 1).await;
    let (status, _) = call(&app, "GET", &format!("/api/sessions/{id}/guidance"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn alter_shape_keeps_the_lowest_quarter() {
    let app = app();
    let id = session(&app, 6).await;
    let (_, before) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    let original = unflatten(&floats(&before["scene"]["target"]["points"])).unwrap();
    let mut spec = PromptSpec::parse(before["scene"]["prompt"].as_str().unwrap()).unwrap();
    spec.adjective = if spec.adjective == "tall" { "wide" } else { "tall" }.into();
    let prompt = spec.render();
    let (status, body) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/edit"),
        Some(json!({ "op": "alter_shape", "prompt": prompt, "target_id": "target", "seed": 3 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let edited = unflatten(&floats(&body["points"])).unwrap();
    let mask = lowest_z_mask(&original, 0.25);
    assert_eq!(mask.iter().filter(|m| **m).count(), N / 4);
    for ((a, b), m) in original.iter().zip(&edited).zip(&mask) {
        if *m {
            assert_eq!(a, b);
        }
    }
    let (_, after) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(after["history"][0]["op"], "alter_shape");
    assert_eq!(after["scene"]["target"]["points"], body["points"]);
}

#[tokio::test]
async fn edit_validation_errors_are_400() {
    let app = app();
    let id = session(&app, 6).await;
    let (_, before) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    let prompt = before["scene"]["prompt"].as_str().unwrap().to_string();
    let (status, body) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/edit"),
        Some(json!({ "op": "replace", "prompt": prompt, "target_id": "target" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "prompt");
    let (status, body) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/edit"),
        Some(json!({ "op": "replace", "prompt": "place a lamp to the left of me", "target_id": "obj9" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "target_id");
    let (_, after) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(after["scene"], before["scene"]);
    assert!(after["history"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn concurrent_edits_on_one_session_conflict() {
    let app = app();
    let id = session(&app, 8).await;
    let uri = format!("/api/sessions/{id}/synthesize");
    let body = json!({ "prompt": "place a desk to the right of me", "seed": 1 });
    let (a, b) = tokio::join!(
        call(&app, "POST", &uri, Some(body.clone())),
        call(&app, "POST", &uri, Some(body.clone()))
    );
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    let (_, view) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(view["history"].as_array().unwrap().len(), 1);

    let other = session(&app, 8).await;
    let other_uri = format!("/api/sessions/{other}/synthesize");
    let (c, d) = tokio::join!(
        call(&app, "POST", &uri, Some(body.clone())),
        call(&app, "POST", &other_uri, Some(body))
    );
    assert_eq!((c.0, d.0), (StatusCode::OK, StatusCode::OK));
}
