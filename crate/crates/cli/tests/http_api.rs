use std::path::Path;
use std::sync::Arc;

use abcde_cli::pipeline::{self, JUDGEMENTS};
use abcde_cli::run::RunDir;
use abcde_cli::server::{router, AppState};
use abcde_core::impact::{estimate_impact_from_sample, summarize_slice};
use abcde_core::{Filter, Metric};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn write_dataset(path: &Path) {
    let mut out = String::new();
    for i in 0..240 {
        let base = i / 12;
        let exp = if i % 5 == 0 { (i / 7) % 30 } else { i / 12 };
        let lang = ["en", "de", "fr"][i % 3];
        let row = json!({
            "item_id": format!("item{i:03}"),
            "weight": 1 + (i % 4),
            "base_cluster": format!("b{base}"),
            "exp_cluster": format!("e{exp}"),
            "attributes": {"lang": lang, "popularity": i % 10},
        });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

/// A run with an item sample and, when `budget` is given, exported tasks.
fn prepare(budget: Option<usize>) -> (TempDir, RunDir) {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    write_dataset(&data);
    let run = RunDir::open_or_create(dir.path().join("run")).unwrap();
    let ds = pipeline::resolve_dataset(Some(&run), Some(&data)).unwrap();
    pipeline::run_impact(Some(&run), &ds).unwrap();
    pipeline::run_sample_items(Some(&run), &ds, 60, 11).unwrap();
    if let Some(budget) = budget {
        pipeline::run_sample_pairs(Some(&run), &ds, 300, 11).unwrap();
        pipeline::run_export_tasks(&run, budget).unwrap();
    }
    (dir, run)
}

fn app(run: &RunDir) -> Router {
    router(Arc::new(AppState::load(run.clone()).unwrap()))
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
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()))
    };
    (status, value)
}

fn close(a: &Value, b: f64) -> bool {
    (a.as_f64().unwrap() - b).abs() <= 1e-12 * (1.0 + b.abs())
}

#[tokio::test]
async fn impact_endpoint_serves_the_stored_report() {
    let (_dir, run) = prepare(None);
    let (status, body) = call(&app(&run), "GET", "/api/impact", None).await;
    assert_eq!(status, StatusCode::OK);
    let stored: Value = serde_json::from_slice(&std::fs::read(run.path("impact.json")).unwrap()).unwrap();
    assert_eq!(body, stored);
}

#[tokio::test]
async fn empty_filter_slice_matches_sample_estimates() {
    let (_dir, run) = prepare(None);
    let (items, _) = pipeline::load_item_sample(&run).unwrap();
    let (status, body) = call(&app(&run), "GET", "/api/slice", None).await;
    assert_eq!(status, StatusCode::OK);
    let summary = summarize_slice(&items, |_| true).unwrap();
    assert!(close(&body["weight"], summary.weight));
    for (key, metric) in [
        ("split_rate", Metric::Split),
        ("merge_rate", Metric::Merge),
        ("jaccard_distance", Metric::Jd),
    ] {
        let est = estimate_impact_from_sample(&items, metric, |_| true).unwrap();
        assert!(close(&body[key], est.value), "{key}");
    }
    assert_eq!(body["examples"].as_array().unwrap().len(), 10);
    assert_eq!(body["groups"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn filtered_slice_groups_and_examples() {
    let (_dir, run) = prepare(None);
    let (items, _) = pipeline::load_item_sample(&run).unwrap();
    let app = app(&run);
    let (status, body) = call(&app, "GET", "/api/slice?filter=lang%3Den&group_by=popularity&metric=split", None).await;
    assert_eq!(status, StatusCode::OK);
    let filter = Filter::parse("lang=en").unwrap();
    let summary = summarize_slice(&items, |s| filter.matches(&s.attributes)).unwrap();
    assert!(close(&body["weight"], summary.weight));
    assert!(close(&body["split_rate"], summary.split_rate));
    assert_eq!(body["metric"], "split");

    let groups = body["groups"].as_array().unwrap();
    assert!(!groups.is_empty() && groups.len() <= 20);
    let total: f64 = groups.iter().map(|g| g["weight"].as_f64().unwrap()).sum();
    assert!((total - summary.weight).abs() < 1e-9);
    let ranked: Vec<f64> = groups.iter().map(|g| g["split_rate"].as_f64().unwrap()).collect();
    assert!(ranked.windows(2).all(|w| w[0] >= w[1]));

    for ex in body["examples"].as_array().unwrap() {
        assert_eq!(ex["attributes"]["lang"], "en");
    }
    let again = call(&app, "GET", "/api/slice?filter=lang%3Den&group_by=popularity&metric=split", None).await;
    assert_eq!(again.1, body);
}

#[tokio::test]
async fn bad_slice_queries_are_rejected() {
    let (_dir, run) = prepare(None);
    let app = app(&run);
    let (status, body) = call(&app, "GET", "/api/slice?filter=%3D%3D", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());
    let (status, _) = call(&app, "GET", "/api/slice?metric=precision", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn judging_endpoints_need_exported_tasks() {
    let (_dir, run) = prepare(None);
    let app = app(&run);
    assert_eq!(call(&app, "GET", "/api/tasks/next", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/quality", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn judging_session_runs_to_completion() {
    let (_dir, run) = prepare(Some(15));
    let app = app(&run);
    let mut seen = Vec::new();
    loop {
        let (status, body) = call(&app, "GET", "/api/tasks/next", None).await;
        if status == StatusCode::NO_CONTENT {
            break;
        }
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["total"], 15);
        assert_eq!(body["remaining"].as_u64().unwrap() as usize, 15 - seen.len());
        let task = &body["task"];
        assert!(task["item_a"].as_str() < task["item_b"].as_str());
        let id = task["task_id"].as_str().unwrap().to_owned();
        let verdict = if seen.len() % 4 == 0 { "not_equivalent" } else { "equivalent" };
        let (status, ack) = call(&app, "POST", "/api/judgements", Some(json!({"task_id": id, "verdict": verdict}))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(ack["overwritten"], false);
        seen.push(id);
    }
    assert_eq!(seen.len(), 15);

    // A second verdict for the same task replaces the first and is logged.
    let (status, ack) = call(&app, "POST", "/api/judgements", Some(json!({"task_id": seen[0], "verdict": "equivalent"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["overwritten"], true);
    assert_eq!(ack["remaining"], 0);
    let log = pipeline::load_judgements(&run).unwrap();
    assert_eq!(log.len(), 16);
    assert_eq!(log.iter().filter(|j| j.task_id == seen[0]).count(), 2);

    let (status, live) = call(&app, "GET", "/api/quality", None).await;
    assert_eq!(status, StatusCode::OK);
    let report = pipeline::run_quality(&run).unwrap();
    let stored: Value = serde_json::from_slice(&std::fs::read(run.path("quality.json")).unwrap()).unwrap();
    assert_eq!(live, stored);
    assert_eq!(live, serde_json::to_value(&report).unwrap());
    assert_eq!(live["judged_pairs"].as_u64().unwrap() as usize, report.judged_pairs);
}

#[tokio::test]
async fn unknown_tasks_and_bad_verdicts_are_refused() {
    let (_dir, run) = prepare(Some(5));
    let app = app(&run);
    let (status, body) = call(&app, "POST", "/api/judgements", Some(json!({"task_id": "feedface", "verdict": "equivalent"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("feedface"));
    assert!(!run.path(JUDGEMENTS).exists());

    let (_, next) = call(&app, "GET", "/api/tasks/next", None).await;
    let id = next["task"]["task_id"].clone();
    let (status, _) = call(&app, "POST", "/api/judgements", Some(json!({"task_id": id, "verdict": "maybe"}))).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn unavailable_verdicts_leave_tasks_answered() {
    let (_dir, run) = prepare(Some(4));
    let app = app(&run);
    let (_, next) = call(&app, "GET", "/api/tasks/next", None).await;
    let id = next["task"]["task_id"].clone();
    call(&app, "POST", "/api/judgements", Some(json!({"task_id": id, "verdict": "unavailable"}))).await;
    let (_, quality) = call(&app, "GET", "/api/quality", None).await;
    let pairs = pipeline::load_task_pairs(&run).unwrap();
    let self_pairs = pairs.iter().filter(|p| p.key.is_self).count();
    let unavailable = pairs
        .iter()
        .filter(|p| p.task_id().as_deref() == id.as_str())
        .count();
    assert_eq!(quality["unavailable_pairs"].as_u64().unwrap() as usize, unavailable);
    assert_eq!(quality["judged_pairs"].as_u64().unwrap() as usize, self_pairs);
    let (_, next) = call(&app, "GET", "/api/tasks/next", None).await;
    assert_eq!(next["remaining"], 3);
}

#[tokio::test]
async fn empty_and_constant_slices() {
    let (_dir, run) = prepare(None);
    let app = app(&run);
    let (status, body) = call(&app, "GET", "/api/slice?filter=lang%3Dnl", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["items"], 0);
    assert_eq!(body["weight"].as_f64().unwrap(), 0.0);
    assert!(body["examples"].as_array().unwrap().is_empty());

    // Every item has some popularity, so grouping on its presence gives one group.
    let (_, overall) = call(&app, "GET", "/api/slice", None).await;
    let (_, grouped) = call(&app, "GET", "/api/slice?filter=popularity%3E%3D0&group_by=lang", None).await;
    let (_, one) = call(&app, "GET", "/api/slice?group_by=missing_attribute", None).await;
    let groups = one["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 1);
    assert!(groups[0]["value"].is_null());
    assert!(close(&groups[0]["jaccard_distance"], overall["jaccard_distance"].as_f64().unwrap()));
    assert!(close(&grouped["weight"], overall["weight"].as_f64().unwrap()));
}

#[tokio::test]
async fn fixture_f_through_the_service() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("f.jsonl");
    let rows = [("a", 1, "B1", "E1"), ("b", 2, "B1", "E2"), ("c", 3, "B2", "E2"), ("d", 4, "B2", "E2")];
    let text: String = rows
        .iter()
        .map(|(id, w, b, e)| format!("{}\n", json!({"item_id": id, "weight": w, "base_cluster": b, "exp_cluster": e})))
        .collect();
    std::fs::write(&data, text).unwrap();
    let run = RunDir::open_or_create(dir.path().join("run")).unwrap();
    let ds = pipeline::resolve_dataset(Some(&run), Some(&data)).unwrap();
    pipeline::run_impact(Some(&run), &ds).unwrap();
    pipeline::run_sample_items(Some(&run), &ds, 10, 1).unwrap();
    let pairs = pipeline::run_sample_pairs(Some(&run), &ds, 100, 1).unwrap();
    assert!(pairs.population_exhausted);
    pipeline::run_export_tasks(&run, 100).unwrap();
    let app = app(&run);

    let (_, impact) = call(&app, "GET", "/api/impact", None).await;
    let (_, slice) = call(&app, "GET", "/api/slice", None).await;
    assert!(close(&impact["overall"]["jaccard_distance"], 86.0 / 225.0));
    assert!(close(&slice["jaccard_distance"], 86.0 / 225.0));

    let same = |x: &str, y: &str| (x <= "b") == (y <= "b");
    while let (StatusCode::OK, next) = call(&app, "GET", "/api/tasks/next", None).await {
        let task = &next["task"];
        let verdict = if same(task["item_a"].as_str().unwrap(), task["item_b"].as_str().unwrap()) {
            "equivalent"
        } else {
            "not_equivalent"
        };
        call(&app, "POST", "/api/judgements", Some(json!({"task_id": task["task_id"], "verdict": verdict}))).await;
    }
    let (_, live) = call(&app, "GET", "/api/quality", None).await;
    let report = pipeline::run_quality(&run).unwrap();
    assert_eq!(live, serde_json::to_value(&report).unwrap());
    let dp = &live["delta_precision"];
    let [lo, hi] = [dp["ci95"][0].as_f64().unwrap(), dp["ci95"][1].as_f64().unwrap()];
    assert!(lo <= -14.0 / 45.0 && -14.0 / 45.0 <= hi, "{dp}");
    // Every split pair severs equivalents and every merge joins strangers.
    assert_eq!(live["good_split"]["estimate"].as_f64().unwrap(), 0.0);
    assert!(close(&live["bad_split"]["estimate"], 2.0 / 15.0));
    assert_eq!(live["good_merge"]["estimate"].as_f64().unwrap(), 0.0);
    assert!(close(&live["bad_merge"]["estimate"], 14.0 / 45.0));
}
