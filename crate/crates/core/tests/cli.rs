use std::path::Path;
use std::process::{Command, Output};

fn somflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_somflow")).args(args).output().expect("launch somflow")
}

fn quick_train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
        "--steps",
        "120",
        "--set",
        "train.warmup_steps=60",
        "--set",
        "train.batch_size=32",
        "--set",
        "train.metrics_every=60",
        "--set",
        "score.k_samples=8",
    ];
    args.extend_from_slice(extra);
    somflow(&args)
}

#[test]
fn train_writes_config_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = quick_train(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.resolved.toml", "metrics.jsonl", "checkpoint.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let resolved = std::fs::read_to_string(dir.path().join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 1"));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for line in metrics.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["coverage"]["total"].is_u64());
    }
}

#[test]
fn arrows_export_a_full_grid_and_coverage() {
    let dir = tempfile::tempdir().unwrap();
    assert!(quick_train(dir.path(), &[]).status.success());
    let ckpt = dir.path().join("checkpoint.json");
    let out = somflow(&["arrows", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("arrows.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("start_x")).collect();
    assert_eq!(rows.len(), 49);
    let cov: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("coverage.json")).unwrap()).unwrap();
    let per_mode: u64 = ["N", "E", "S", "W"].iter().map(|k| cov[k].as_u64().unwrap()).sum();
    assert_eq!(cov["total"].as_u64().unwrap(), per_mode);
}

#[test]
fn multiple_runs_use_consecutive_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = quick_train(dir.path(), &["--runs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for (i, seed) in [(0, 1), (1, 2)] {
        let resolved = std::fs::read_to_string(dir.path().join(format!("run-{i}/config.resolved.toml"))).unwrap();
        assert!(resolved.contains(&format!("seed = {seed}")), "run-{i}");
    }
}

#[test]
fn score_field_rows_carry_a_cosine() {
    let dir = tempfile::tempdir().unwrap();
    let out = somflow(&["score-field", "--k", "200", "--grid", "5", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("score_field.csv")).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next().unwrap(), "x,y,est_sx,est_sy,oracle_sx,oracle_sy,cosine");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| (-1.0..=1.0).contains(&r[6])));
}

#[test]
fn selftest_reports_every_check() {
    let out = somflow(&["selftest"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 7);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn bad_invocations_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(somflow(&["eval", "--checkpoint", missing.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(somflow(&["train", "--seed", "0"]).status.code(), Some(2));
    let out = dir.path().join("o");
    let bad = somflow(&["train", "--seed", "0", "--out", out.to_str().unwrap(), "--set", "score.k_samples=0"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&bad.stderr).is_empty());
}
