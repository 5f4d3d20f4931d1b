use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_driftwatch");

const CONFIG: &str = r#"{
  "data": { "manifest": "data/manifest.csv" },
  "synth": { "n_samples": 600, "dim": 8, "drift_onset": 0.85,
             "drift": { "kind": "covariate_shift", "delta": [2.0, 4.0] } },
  "trainer": { "lr": 0.01, "max_epochs": 20 },
  "adaptation": { "mode": "uda", "uda": { "epochs": 10, "lr": 0.01 } },
  "tune": { "grid": { "window_len_days": [7, 14], "overlap": [0.0], "min_batch": [0],
                      "cusum_drift": [0.2], "cusum_threshold": [0.5],
                      "reference": ["all"], "kernel": [{ "family": "linear" }] } }
}"#;

fn driftwatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), CONFIG).unwrap();
    let out = driftwatch(dir.path(), &["synth", "--config", "c.json", "--out", "data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn synth_then_run_writes_schema_valid_report() {
    let dir = setup();
    let out = driftwatch(dir.path(), &["run", "--config", "c.json", "--out", "r"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout["command"], "run");

    let text = std::fs::read_to_string(dir.path().join("r/report.ndjson")).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let (summary, windows) = lines.split_last().unwrap();
    assert_eq!(summary["record"], "summary");
    assert_eq!(summary["n_windows"].as_u64().unwrap() as usize, windows.len());
    let keys = ["window_index", "t_start", "t_end", "n", "mmd", "cusum_g", "alert", "model_version", "metrics"];
    let mut sorted = keys.to_vec();
    sorted.sort_unstable();
    for (i, (w, raw)) in windows.iter().zip(text.lines()).enumerate() {
        let obj = w.as_object().unwrap();
        assert_eq!(obj.keys().map(String::as_str).collect::<Vec<_>>(), sorted);
        let pos: Vec<usize> = keys.iter().map(|k| raw.find(&format!("\"{k}\":")).unwrap()).collect();
        assert!(pos.windows(2).all(|p| p[0] < p[1]), "key order in {raw}");
        assert_eq!(w["window_index"].as_u64().unwrap() as usize, i);
        assert!(w["metrics"]["balanced_accuracy"].is_f64());
    }
    let alerts = windows.iter().filter(|w| w["alert"] == true).count();
    assert_eq!(summary["events"].as_array().unwrap().len(), alerts);
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let dir = setup();
    for o in ["a", "b"] {
        assert!(driftwatch(dir.path(), &["run", "--config", "c.json", "--seed", "3", "--out", o]).status.success());
    }
    let a = std::fs::read(dir.path().join("a/report.ndjson")).unwrap();
    let b = std::fs::read(dir.path().join("b/report.ndjson")).unwrap();
    assert_eq!(a, b);
    assert!(driftwatch(dir.path(), &["run", "--config", "c.json", "--seed", "4", "--out", "c"]).status.success());
    assert_ne!(a, std::fs::read(dir.path().join("c/report.ndjson")).unwrap());
}

#[test]
fn every_subcommand_succeeds() {
    let dir = setup();
    for (cmd, file) in [
        ("ingest", "samples.ndjson"),
        ("train-baseline", "model.json"),
        ("tune", "grid.csv"),
        ("scan", "scan.ndjson"),
        ("evaluate", "evaluation.json"),
    ] {
        let out = driftwatch(dir.path(), &[cmd, "--config", "c.json", "--seed", "1", "--out", "o"]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join("o").join(file).exists(), "{cmd}");
    }
    let grid = std::fs::read_to_string(dir.path().join("o/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 3);
    let ingested = std::fs::read(dir.path().join("o/samples.ndjson")).unwrap();
    assert_eq!(ingested, std::fs::read(dir.path().join("data/embeddings.ndjson")).unwrap());
    let scan = std::fs::read_to_string(dir.path().join("o/scan.ndjson")).unwrap();
    let summary: Value = serde_json::from_str(scan.lines().last().unwrap()).unwrap();
    assert_eq!(summary["mode"], "none");
    assert!(summary["events"].as_array().unwrap().is_empty());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = driftwatch(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(driftwatch(dir.path(), &["run", "--seed", "nope"]).status.code(), Some(2));
    assert_eq!(driftwatch(dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = driftwatch(dir.path(), &["run", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "MissingFile");
    assert_eq!(err["stage"], "config");

    std::fs::write(dir.path().join("c.json"), r#"{"data": {"manifest": "m.csv"}}"#).unwrap();
    std::fs::write(dir.path().join("m.csv"), "sample_id,subject_id,timestamp,label,source\n").unwrap();
    let out = driftwatch(dir.path(), &["ingest", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "Parse");
    assert_eq!(err["stage"], "ingest");
    assert!(err["error"].as_str().unwrap().contains("no data rows"));
}
