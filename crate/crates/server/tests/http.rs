use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use riskbench_core::source::generate_synthetic;
use riskbench_core::{FeatureRegistry, ProjectStore};
use riskbench_server::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

const REGISTRY: &str = include_str!("../../../config/features.toml");

fn registry() -> FeatureRegistry {
    FeatureRegistry::from_toml(REGISTRY).unwrap()
}

fn app(root: &std::path::Path, pool_size: usize) -> Router {
    let reg = registry();
    let pool = generate_synthetic(7, pool_size, &reg, None).unwrap();
    let store = ProjectStore::open(root, Arc::new(reg)).unwrap();
    router(AppState::new(store, Arc::new(pool)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let value = serde_json::from_str(&text).unwrap_or(Value::Null);
    (status, value, text)
}

async fn wait_for_job(app: &Router, job: &str) -> Value {
    let start = Instant::now();
    loop {
        let (status, doc, _) = call(app, "GET", &format!("/jobs/{job}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if ["done", "failed", "cancelled"].contains(&doc["state"].as_str().unwrap()) {
            return doc;
        }
        assert!(start.elapsed() < Duration::from_secs(60), "job did not finish");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

async fn setup_project(app: &Router, name: &str, inputs: &[&str]) {
    let body = json!({"name": name, "goal": "rejection_1y", "inputs": inputs});
    let (status, doc, _) = call(app, "POST", "/projects", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{doc}");
}

#[tokio::test(flavor = "multi_thread")]
async fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 300);

    let (status, features, text) = call(&app, "GET", "/features", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(features.as_array().unwrap().len(), registry().features().len());
    assert!(!text.contains("source_query") && !text.contains("uniform:"));

    setup_project(&app, "baseline", &["female", "diabetes", "donor_type"]).await;
    let (_, projects, _) = call(&app, "GET", "/projects?goal=rejection_1y", None).await;
    assert_eq!(projects[0]["id"], "rejection_1y/baseline");

    let (status, ds, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/baseline/datasets",
        Some(json!({"name": "train"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{ds}");
    assert_eq!(ds["rows"], 300);
    assert_eq!(ds["columns"].as_array().unwrap().len(), 6);

    let (status, job, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/baseline/models",
        Some(json!({"dataset": "train", "name": "m1", "fit_config": {"max_model_size": 3}})),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{job}");
    let job = wait_for_job(&app, job["id"].as_str().unwrap()).await;
    assert_eq!(job["state"], "done", "{job}");
    assert_eq!(job["model"], "m1");

    let (status, view, _) = call(&app, "GET", "/projects/rejection_1y/baseline/models/m1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["model"]["solver_status"], "optimal");
    assert!(!view["scoring_table"]["risk_rows"].as_array().unwrap().is_empty());

    let (_, models, _) = call(&app, "GET", "/projects/rejection_1y/baseline/models", None).await;
    assert_eq!(models[0]["name"], "m1");

    let (status, report, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/baseline/validate",
        Some(json!({"model": "m1", "dataset": "train"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["rows"].as_array().unwrap().len(), 19);
    assert_eq!(report["n"], 300);

    // model names are unique per project
    let (status, err, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/baseline/models",
        Some(json!({"dataset": "train", "name": "m1"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "conflict");
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 50);
    let root = dir.path().to_str().unwrap().to_owned();

    let (status, err, text) = call(
        &app,
        "POST",
        "/projects/rejection_1y/ghost/datasets",
        Some(json!({"name": "d"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
    assert!(err.get("detail").is_some());
    assert!(!text.contains(&root));

    setup_project(&app, "p", &["female"]).await;
    let (status, _, _) = call(
        &app,
        "POST",
        "/projects",
        Some(json!({"name": "p", "goal": "rejection_1y", "inputs": ["female"]})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, err, _) = call(&app, "POST", "/projects", Some(json!({"name": "x"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "validation");

    let (status, _, _) = call(
        &app,
        "POST",
        "/projects",
        Some(json!({"name": "q", "goal": "female", "inputs": ["diabetes"]})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _, _) = call(&app, "GET", "/jobs/job-404", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // unknown entity restriction
    let (status, err, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/p/datasets",
        Some(json!({"name": "d", "entity_ids": ["p1", "nobody"]})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{err}");

    let (status, ds, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/p/datasets",
        Some(json!({"name": "d", "entity_ids": ["p3", "p1"]})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(ds["entity_ids"], json!(["p3", "p1"]));

    // exact search over a space beyond the budget is refused up front
    let (status, err, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/p/models",
        Some(json!({"dataset": "d", "name": "m", "fit_config": {"solver_mode": "exact", "exact_budget": 1}})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "infeasible_scale");
}

#[tokio::test(flavor = "multi_thread")]
async fn validate_rejects_foreign_layout() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 80);
    setup_project(&app, "a", &["female", "diabetes"]).await;
    setup_project(&app, "b", &["diabetes", "female"]).await;
    for p in ["a", "b"] {
        let (status, _, _) = call(
            &app,
            "POST",
            &format!("/projects/rejection_1y/{p}/datasets"),
            Some(json!({"name": "d"})),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let (_, job, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/a/models",
        Some(json!({"dataset": "d", "name": "m"})),
    )
    .await;
    assert_eq!(wait_for_job(&app, job["id"].as_str().unwrap()).await["state"], "done");

    let (status, err, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/a/validate",
        Some(json!({"model": "m", "dataset": "d", "dataset_project": "rejection_1y/b"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["detail"]["index"], 1);
    assert_eq!(err["detail"]["expected"], "female");
    assert!(err["message"].as_str().unwrap().contains("female"));

    let (status, report, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/a/validate",
        Some(json!({"model": "m", "dataset": "d", "thresholds": [0.37, 0.5]})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn cancel_running_and_queued_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 2000);
    setup_project(&app, "big", &["recipient_age", "donor_age", "hla_mismatch", "cold_ischemia_hours", "dialysis_years", "blood_group"]).await;
    let (status, _, _) = call(
        &app,
        "POST",
        "/projects/rejection_1y/big/datasets",
        Some(json!({"name": "d"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);

    let slow = json!({"solver_mode": "exact", "max_model_size": 5, "exact_budget": 1_000_000_000u64, "time_limit_seconds": 600});
    let mut ids = Vec::new();
    for name in ["m1", "m2"] {
        let (status, job, _) = call(
            &app,
            "POST",
            "/projects/rejection_1y/big/models",
            Some(json!({"dataset": "d", "name": name, "fit_config": slow})),
        )
        .await;
        assert_eq!(status, StatusCode::ACCEPTED, "{job}");
        ids.push(job["id"].as_str().unwrap().to_owned());
    }

    // the second job waits behind the first
    let start = Instant::now();
    loop {
        let (_, doc, _) = call(&app, "GET", &format!("/jobs/{}", ids[0]), None).await;
        if doc["state"] == "running" {
            break;
        }
        assert!(start.elapsed() < Duration::from_secs(10));
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let (_, queued, _) = call(&app, "GET", &format!("/jobs/{}", ids[1]), None).await;
    assert_eq!(queued["state"], "queued");

    let (status, doc, _) = call(&app, "POST", &format!("/jobs/{}/cancel", ids[1]), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["state"], "cancelled");
    call(&app, "POST", &format!("/jobs/{}/cancel", ids[0]), None).await;
    assert_eq!(wait_for_job(&app, &ids[0]).await["state"], "cancelled");
    assert_eq!(wait_for_job(&app, &ids[1]).await["state"], "cancelled");

    let (_, models, _) = call(&app, "GET", "/projects/rejection_1y/big/models", None).await;
    assert_eq!(models, json!([]));
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_preserves_responses() {
    let dir = tempfile::tempdir().unwrap();
    let first = app(dir.path(), 120);
    setup_project(&first, "r", &["female", "blood_group"]).await;
    call(&first, "POST", "/projects/rejection_1y/r/datasets", Some(json!({"name": "d"}))).await;
    let (_, job, _) = call(
        &first,
        "POST",
        "/projects/rejection_1y/r/models",
        Some(json!({"dataset": "d", "name": "m"})),
    )
    .await;
    wait_for_job(&first, job["id"].as_str().unwrap()).await;

    let reads = [
        ("GET", "/projects?goal=rejection_1y", None),
        ("GET", "/projects/rejection_1y/r", None),
        ("GET", "/projects/rejection_1y/r/datasets", None),
        ("GET", "/projects/rejection_1y/r/models", None),
        ("GET", "/projects/rejection_1y/r/models/m", None),
        ("POST", "/projects/rejection_1y/r/validate", Some(json!({"model": "m", "dataset": "d"}))),
    ];
    let mut before = Vec::new();
    for (m, uri, body) in &reads {
        before.push(call(&first, m, uri, body.clone()).await.2);
    }
    drop(first);
    let second = app(dir.path(), 120);
    for ((m, uri, body), old) in reads.iter().zip(&before) {
        assert_eq!(&call(&second, m, uri, body.clone()).await.2, old, "{uri}");
    }
}
