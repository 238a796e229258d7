use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use fsdiag_core::synthetic::{generate, SyntheticConfig};
use fsdiag_service::api::router;

fn small_pool(dir: &Path, seed: u64) -> PathBuf {
    let config = SyntheticConfig {
        num_samples: 120,
        num_learners: 6,
        num_corrupted: 2,
        ..Default::default()
    };
    generate(&config, seed).unwrap().write_to_dir(dir).unwrap()
}

fn app() -> Router {
    router(Arc::default(), None)
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
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn session(app: &Router, manifest: &Path) -> String {
    let (status, body) = call(app, "POST", "/api/sessions", Some(json!({ "manifest_path": manifest, "seed": 5 }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

async fn select_all(app: &Router, id: &str) -> Value {
    let cmds: Vec<Value> = (0..6)
        .map(|k| json!({ "op": "set_learner", "id": format!("learner-{k:02}"), "selected": true }))
        .collect();
    let (status, body) = call(app, "POST", &format!("/api/sessions/{id}/edits"), Some(json!({ "commands": cmds }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

#[tokio::test]
async fn health() {
    let (status, body) = call(&app(), "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({ "status": "ok" }));
}

#[tokio::test]
async fn session_ids_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_pool(dir.path(), 1);
    let app = app();
    let a = session(&app, &manifest).await;
    let b = session(&app, &manifest).await;
    assert_eq!(a.len(), 32);
    assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
    assert_ne!(a, b);

    // Sessions share no mutable state.
    select_all(&app, &a).await;
    let (_, ov) = call(&app, "GET", &format!("/api/sessions/{b}/overview"), None).await;
    assert!(ov["learners"].as_array().unwrap().iter().all(|l| l["selected"] == false));

    let (status, body) = call(&app, "GET", "/api/sessions/ffff/overview", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_session");

    std::fs::write(dir.path().join("bad.json"), "{\"version\": 1}").unwrap();
    let (status, body) = call(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({ "manifest_path": dir.path().join("bad.json"), "seed": 0 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "manifest_parse");

    let (status, _) = call(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({ "manifest_path": dir.path().join("missing.json") })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn overview_and_edits() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_pool(dir.path(), 2);
    let app = app();
    let id = session(&app, &manifest).await;

    let (status, ov) = call(&app, "GET", &format!("/api/sessions/{id}/overview"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ov["learners"].as_array().unwrap().len(), 6);
    assert!(ov["learners"][0]["overall_diff"].is_null());
    assert!(ov["learners"][0]["lambda"].as_f64().unwrap() >= 0.0);
    assert!(ov["summary"]["accuracy"].is_null());
    assert_eq!(ov["shots"].as_array().unwrap().len(), 17);

    let summary = select_all(&app, &id).await;
    assert_eq!(summary["edit_count"], 6);
    assert!(summary["accuracy"].as_f64().is_some());
    let hash = summary["state_hash"].as_str().unwrap().to_string();

    // add_shot then undo restores the hash
    let shots: Vec<u64> = ov["shots"].as_array().unwrap().iter().map(|s| s["sample"].as_u64().unwrap()).collect();
    let free = (0..120).find(|i| !shots.contains(i)).unwrap();
    let uri = format!("/api/sessions/{id}/edits");
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "command": { "op": "add_shot", "sample": free, "class": 0 } }))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, undone) = call(&app, "POST", &uri, Some(json!({ "command": { "op": "undo" } }))).await;
    assert_eq!(undone["state_hash"], hash.as_str());
    assert_eq!(undone["edit_count"], 8);

    // rejected edits are 409 and leave the state alone
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "command": { "op": "remove_shot", "sample": free } }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "edit_rejected");
    let (status, body) = call(
        &app,
        "POST",
        &uri,
        Some(json!({ "command": { "op": "set_weight", "id": "learner-00", "weight": 2.0 }, "expected_state_hash": "00" })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "stale_state");
    let (_, ov) = call(&app, "GET", &format!("/api/sessions/{id}/overview"), None).await;
    assert_eq!(ov["summary"]["state_hash"], hash.as_str());
    assert!(ov["learners"][0]["overall_diff"].as_u64().is_some());

    let (status, _) = call(&app, "POST", &uri, Some(json!({}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "command": { "op": "explode" } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn weights_renormalize_in_the_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_pool(dir.path(), 3);
    let app = app();
    let id = session(&app, &manifest).await;
    select_all(&app, &id).await;
    let uri = format!("/api/sessions/{id}/edits");
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "command": { "op": "set_weight", "id": "learner-01", "weight": 1.5 } }))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, sample) = call(&app, "GET", &format!("/api/sessions/{id}/samples/7"), None).await;
    assert_eq!(status, StatusCode::OK);
    let learners = sample["learners"].as_array().unwrap();
    let dist = sample["label_distribution"].as_array().unwrap();
    for c in 0..dist.len() {
        let mut num = 0.0;
        for (k, l) in learners.iter().enumerate() {
            let w = if k == 1 { 1.5 } else { 1.0 };
            num += w * l["distribution"][c].as_f64().unwrap();
        }
        assert!((dist[c].as_f64().unwrap() - num / 6.5).abs() < 1e-12);
    }
    assert!(sample["image_path"].is_null());
    let (status, _) = call(&app, "GET", &format!("/api/sessions/{id}/samples/120"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn recommendations_carry_provenance_and_stale_apply_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_pool(dir.path(), 4);
    let app = app();
    let id = session(&app, &manifest).await;

    let (status, body) = call(&app, "POST", &format!("/api/sessions/{id}/recommend/shots"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "no_selected_learners");

    let learners_uri = format!("/api/sessions/{id}/recommend/learners");
    let (status, rec) = call(&app, "POST", &learners_uri, Some(json!({ "config": { "seed": 11 } }))).await;
    assert_eq!(status, StatusCode::OK, "{rec}");
    for key in ["seed", "config_hash", "state_hash", "selected_learner_ids", "ratio"] {
        assert!(!rec[key].is_null(), "missing {key}");
    }
    let (_, again) = call(&app, "POST", &learners_uri, Some(json!({ "config": { "seed": 11 } }))).await;
    assert_eq!(rec, again);
    let (_, defaulted) = call(&app, "POST", &learners_uri, None).await;
    assert_eq!(defaulted["ratio"], 0.05);

    // Apply the recommendation against the hash it was computed for.
    let cmds: Vec<Value> = rec["selected_learner_ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| json!({ "op": "set_learner", "id": l, "selected": true }))
        .collect();
    let edits = format!("/api/sessions/{id}/edits");
    let body = json!({ "commands": cmds, "expected_state_hash": rec["state_hash"] });
    let (status, applied) = call(&app, "POST", &edits, Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK, "{applied}");
    // Re-applying the same (now stale) recommendation is refused.
    let (status, _) = call(&app, "POST", &edits, Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let shots_uri = format!("/api/sessions/{id}/recommend/shots");
    let (status, shots) = call(&app, "POST", &shots_uri, Some(json!({ "budget": 10, "ratio": 0.1, "seed": 2 }))).await;
    assert_eq!(status, StatusCode::OK, "{shots}");
    assert_eq!(shots["budget"], 10);
    assert_eq!(shots["state_hash"], applied["state_hash"]);
    assert!(shots["recommended_sample_indices"].as_array().unwrap().len() >= 1);
    let (status, _) = call(&app, "POST", &shots_uri, Some(json!({ "budget": 0 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &shots_uri, Some(json!({ "bogus": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn diagnostics_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_pool(dir.path(), 5);
    let app = app();
    let id = session(&app, &manifest).await;
    select_all(&app, &id).await;
    let base = format!("/api/sessions/{id}");

    let (status, ag) = call(&app, "GET", &format!("{base}/agreement"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ag["learners"].as_array().unwrap().len(), 6);
    assert_eq!(ag["learners"][0]["per_class"].as_array().unwrap().len(), 5);

    let (status, h) = call(&app, "GET", &format!("{base}/histogram?learner=learner-02&class=1"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(h["learner"]["counts"].as_array().unwrap().len(), 4);
    let (status, _) = call(&app, "GET", &format!("{base}/histogram?learner=learner-02&class=9"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", &format!("{base}/histogram?learner=nobody&class=0"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, inf) = call(&app, "GET", &format!("{base}/influence?learner=learner-03"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(inf["mode"], "leave_one_out");
    assert_eq!(inf["deltas"].as_array().unwrap().len(), 120);

    let (_, ov) = call(&app, "GET", &format!("{base}/overview"), None).await;
    let shot = ov["shots"][0]["sample"].as_u64().unwrap();
    let (status, cov) = call(&app, "GET", &format!("{base}/coverage?shot={shot}&k=5"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(cov["neighbors"].as_array().unwrap().len(), 5);
    let (status, cov) = call(&app, "GET", &format!("{base}/coverage?shot={shot}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(cov["neighbors"].as_array().unwrap().len(), 20);

    let (status, proj) = call(&app, "GET", &format!("{base}/projection?ratio=0.2&seed=3"), None).await;
    assert_eq!(status, StatusCode::OK, "{proj}");
    let n = proj["coords"].as_array().unwrap().len();
    assert_eq!(n, proj["samples"].as_array().unwrap().len());
    assert_eq!(proj["method"], "tsne-exact");
    let shots_in = proj["samples"].as_array().unwrap().iter().filter(|s| s["is_shot"] == true).count();
    assert_eq!(shots_in, 17);
    let (_, again) = call(&app, "GET", &format!("{base}/projection?ratio=0.2&seed=3"), None).await;
    assert_eq!(proj, again);

    let (status, cl) = call(&app, "GET", &format!("{base}/clusters?kind=learners&count=2"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(cl["merges"].as_array().unwrap().len(), 5);
    assert_eq!(cl["assignment"].as_array().unwrap().len(), 6);
    let (status, cl) = call(&app, "GET", &format!("{base}/clusters?kind=classes&count=3"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(cl["labels"].as_array().unwrap().len(), 5);
    let (status, _) = call(&app, "GET", &format!("{base}/clusters?kind=classes&count=9"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", &format!("{base}/clusters?kind=nope&count=2"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn weight_adjust_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_pool(dir.path(), 6);
    let app = app();
    let id = session(&app, &manifest).await;
    select_all(&app, &id).await;
    let uri = format!("/api/sessions/{id}/weight-adjust");
    let (status, adj) = call(
        &app,
        "POST",
        &uri,
        Some(json!({ "learner_id": "learner-01", "direction": "increase", "selection": [0, 1, 2, 3] })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{adj}");
    assert!(adj["objective_after"].as_f64().unwrap() >= adj["objective_before"].as_f64().unwrap());
    let new_weight = adj["new_weight"].as_f64().unwrap();
    let (_, ov) = call(&app, "GET", &format!("/api/sessions/{id}/overview"), None).await;
    assert_eq!(ov["learners"][1]["weight"].as_f64().unwrap(), new_weight);
    match adj["status"].as_str().unwrap() {
        "adjusted" => assert!(new_weight > 1.0),
        "no_improvement" => assert_eq!(new_weight, 1.0),
        other => panic!("unexpected status {other}"),
    }

    let (status, body) = call(
        &app,
        "POST",
        &uri,
        Some(json!({ "learner_id": "learner-01", "direction": "decrease", "selection": [0], "grid": { "max": 5.0, "step": 0.1 } })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");

    let edits = format!("/api/sessions/{id}/edits");
    call(&app, "POST", &edits, Some(json!({ "command": { "op": "set_weight", "id": "learner-02", "weight": 5.0 } }))).await;
    let (status, body) = call(
        &app,
        "POST",
        &uri,
        Some(json!({ "learner_id": "learner-02", "direction": "increase", "selection": [0] })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "infeasible_direction");
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "learner_id": "learner-02", "direction": "sideways", "selection": [0] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_edits_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_pool(dir.path(), 7);
    let app = app();
    let id = session(&app, &manifest).await;
    let mut handles = Vec::new();
    for t in 0..16 {
        let app = app.clone();
        let uri = format!("/api/sessions/{id}/edits");
        handles.push(tokio::spawn(async move {
            let w = 0.5 + t as f64 / 10.0;
            let (status, body) = call(
                &app,
                "POST",
                &uri,
                Some(json!({ "command": { "op": "set_weight", "id": "learner-00", "weight": w } })),
            )
            .await;
            assert_eq!(status, StatusCode::OK);
            body["edit_count"].as_u64().unwrap()
        }));
    }
    let mut counts = Vec::new();
    for h in handles {
        counts.push(h.await.unwrap());
    }
    counts.sort_unstable();
    assert_eq!(counts, (1..=16).collect::<Vec<u64>>());
}

#[tokio::test]
async fn static_assets_are_served_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = router(Arc::default(), Some(dir.path().to_path_buf()));
    let (status, body) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, Value::String("<html>ui</html>".into()));
    let (status, _) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
}
