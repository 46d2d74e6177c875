use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use abcde_cli::error::CliError;
use abcde_cli::pipeline::{self, QUALITY, TASKS, TASK_PAIRS};
use abcde_cli::run::RunDir;
use serde_json::{json, Value};
use tempfile::TempDir;

fn abcde(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_abcde"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "abcde {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_dataset(path: &Path) {
    let mut out = String::new();
    for i in 0..150 {
        let exp = if i % 4 == 0 { (i * 7) % 25 } else { i / 6 };
        let row = json!({
            "item_id": format!("x{i}"),
            "weight": 1.0 + (i % 3) as f64 * 0.5,
            "base_cluster": format!("b{}", i / 6),
            "exp_cluster": format!("e{exp}"),
            "attributes": {"kind": if i % 2 == 0 { "even" } else { "odd" }},
        });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs the whole pipeline through the binary into `run`.
fn pipeline_run(data: &Path, run: &Path, budget: usize) {
    abcde(&["impact", "--dataset", s(data), "--run", s(run)]);
    abcde(&["sample-items", "--run", s(run), "--n", "40", "--seed", "5"]);
    abcde(&["sample-pairs", "--run", s(run), "--n", "200", "--seed", "5"]);
    abcde(&["export-tasks", "--run", s(run), "--budget", &budget.to_string()]);
    let tasks = std::fs::read_to_string(run.join(TASKS)).unwrap();
    let verdicts: String = tasks
        .lines()
        .enumerate()
        .map(|(k, line)| {
            let task: Value = serde_json::from_str(line).unwrap();
            let verdict = if k % 3 == 0 { "not_equivalent" } else { "equivalent" };
            format!("{}\n", json!({"task_id": task["task_id"], "verdict": verdict}))
        })
        .collect();
    let file = run.with_extension("verdicts.jsonl");
    std::fs::write(&file, verdicts).unwrap();
    abcde(&["import-judgements", "--run", s(run), s(&file)]);
    abcde(&["quality", "--run", s(run)]);
}

fn artifacts(run: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(run)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    write_dataset(&data);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline_run(&data, &a, 25);
    pipeline_run(&data, &b, 25);
    let (fa, fb) = (artifacts(&a), artifacts(&b));
    assert_eq!(fa.len(), 12);
    assert_eq!(
        fa.iter().map(|p| p.file_name()).collect::<Vec<_>>(),
        fb.iter().map(|p| p.file_name()).collect::<Vec<_>>()
    );
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let ma = RunDir::open(&a).unwrap().manifest().unwrap();
    let mb = RunDir::open(&b).unwrap().manifest().unwrap();
    for (name, rec) in &ma.artifacts {
        assert_eq!(rec.hash, mb.artifacts[name].hash);
        assert_eq!(rec.upstream, mb.artifacts[name].upstream);
    }
}

#[test]
fn stdout_and_out_files_carry_the_primary_output() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    write_dataset(&data);
    let printed = abcde(&["impact", "--dataset", s(&data)]);
    let report: Value = serde_json::from_slice(&printed.stdout).unwrap();
    assert!(report["overall"]["jaccard_distance"].as_f64().unwrap() > 0.0);

    let copy = dir.path().join("impact_copy.json");
    let quiet = abcde(&["impact", "--dataset", s(&data), "--out", s(&copy)]);
    assert!(quiet.stdout.is_empty());
    assert_eq!(std::fs::read(&copy).unwrap(), printed.stdout);

    let rows = abcde(&["sample-items", "--dataset", s(&data), "--n", "10"]);
    let lines: Vec<Value> = String::from_utf8(rows.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l["importance_weight"].as_f64().unwrap() > 0.0));
}

#[test]
fn zero_budget_leaves_rates_unavailable() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    write_dataset(&data);
    let run = dir.path().join("r");
    pipeline_run(&data, &run, 0);
    let report: Value = serde_json::from_slice(&std::fs::read(run.join(QUALITY)).unwrap()).unwrap();
    for rate in ["good_split", "bad_split", "good_merge", "bad_merge"] {
        assert!(report[rate].is_null(), "{rate}");
    }
    assert_eq!(std::fs::read_to_string(run.join(TASKS)).unwrap(), "");
}

#[test]
fn unknown_verdicts_are_reported_and_skipped() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    write_dataset(&data);
    let run = dir.path().join("r");
    pipeline_run(&data, &run, 5);
    let file = dir.path().join("stray.jsonl");
    std::fs::write(&file, "{\"task_id\":\"0000\",\"verdict\":\"equivalent\"}\n").unwrap();
    let out = abcde(&["import-judgements", "--run", s(&run), s(&file)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped 1 verdicts"));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["recorded"], 0);
    assert_eq!(summary["unknown_tasks"], json!(["0000"]));
}

#[test]
fn edited_or_outdated_artifacts_are_refused() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    write_dataset(&data);
    let root = dir.path().join("r");
    pipeline_run(&data, &root, 10);
    let run = RunDir::open(&root).unwrap();
    assert!(pipeline::run_quality(&run).is_ok());

    // Resampling pairs invalidates the exported tasks built on the old sample.
    abcde(&["sample-pairs", "--run", s(&root), "--n", "200", "--seed", "6"]);
    match pipeline::run_quality(&run) {
        Err(CliError::StaleArtifact { artifact, .. }) => assert_eq!(artifact, TASK_PAIRS),
        other => panic!("expected a stale artifact, got {other:?}"),
    }
    abcde(&["export-tasks", "--run", s(&root), "--budget", "10"]);
    assert!(pipeline::run_quality(&run).is_ok());

    // Hand edits are detected by content hash.
    let path = root.join(TASK_PAIRS);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push('\n');
    std::fs::write(&path, text).unwrap();
    assert!(matches!(
        pipeline::run_quality(&run),
        Err(CliError::StaleArtifact { .. })
    ));

    // A changed dataset makes the impact report stale.
    let mut rows = std::fs::read_to_string(&data).unwrap();
    rows = rows.replacen("\"weight\":1.0", "\"weight\":9.0", 1);
    std::fs::write(&data, rows).unwrap();
    pipeline::resolve_dataset(Some(&run), Some(&data)).unwrap();
    assert!(matches!(
        run.read_json::<Value>(pipeline::IMPACT),
        Err(CliError::StaleArtifact { .. })
    ));
}

#[test]
fn missing_runs_are_errors() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_abcde"))
        .args(["quality", "--run", s(&dir.path().join("nope"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a run directory"));
}
