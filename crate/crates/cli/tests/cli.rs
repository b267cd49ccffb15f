use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hetmotion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetmotion")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "hidden": 4,
        "ds_inner_depth": 1,
        "gcn_depth": 1,
        "gru_depth": 1,
        "batches_per_epoch": 2,
        "train_actions": ["directions", "greeting"],
        "input_len": 20,
        "max_vertices": 5,
        "synthetic_frames": 80,
        "eval_tasks": 3
    });
    let path = dir.join("tiny.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(hetmotion(&["--help"]).status.code(), Some(0));
    assert_eq!(hetmotion(&["--version"]).status.code(), Some(0));
    assert_eq!(hetmotion(&[]).status.code(), Some(1));
    assert_eq!(hetmotion(&["train"]).status.code(), Some(1));
    assert_eq!(hetmotion(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn invalid_settings_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = hetmotion(&["train", "--run-dir", s(&run), "--epochs", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
    let out = hetmotion(&["train", "--run-dir", s(&run), "--lr", "-1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.bin");
    assert_eq!(hetmotion(&["inspect-checkpoint", s(&missing)]).status.code(), Some(2));
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(hetmotion(&["inspect-checkpoint", s(&junk)]).status.code(), Some(2));
}

#[test]
fn train_eval_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let out = hetmotion(&["train", "--run-dir", s(&run), "--config", &cfg, "--epochs", "2", "--synthetic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["config.json", "losses.csv", "checkpoint.bin"] {
        assert!(run.join(name).is_file(), "{name}");
    }
    let losses = fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3);

    let traces = dir.path().join("traces.csv");
    let out = hetmotion(&["eval", "--run-dir", s(&run), "--traces", s(&traces)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("average"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["model"], "graph-het-net");
    assert!(fs::read_to_string(run.join("report.csv")).unwrap().starts_with("model,action"));
    assert!(fs::read_to_string(&traces).unwrap().contains("predicted"));

    let out = hetmotion(&["eval", "--run-dir", s(&run), "--model", "zero-velocity"]);
    assert!(out.status.success());
    assert!(fs::read_to_string(run.join("report.json")).unwrap().contains("zero-velocity"));

    let out = hetmotion(&["inspect-checkpoint", s(&run.join("checkpoint.bin"))]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("pred.head.w"));
}

#[test]
fn validation_flag_adds_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let out = hetmotion(&[
        "train", "--run-dir", s(&run), "--config", &cfg, "--epochs", "3",
        "--val-actions", "greeting", "--val-tasks", "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("keeping epoch"));
    let losses = fs::read_to_string(run.join("losses.csv")).unwrap();
    assert!(losses.starts_with("epoch,loss,val\n"));
    let out = hetmotion(&["train", "--run-dir", s(&run), "--config", &cfg, "--val-actions", "walking"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for run in [&a, &b] {
        let out = hetmotion(&["train", "--synthetic", "--epochs", "5", "--seed", "7", "--config", &cfg, "--run-dir", s(run)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["config.json", "losses.csv", "checkpoint.bin"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn synthetic_export_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("data");
    let out = hetmotion(&["gen-synthetic", "--out", s(&data), "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("S5").join("walking_1.txt").is_file());
    assert!(data.join("graph.txt").is_file());

    let run = dir.path().join("run");
    let out = hetmotion(&[
        "eval", "--run-dir", s(&run), "--model", "zero-velocity", "--config", &cfg,
        "--data-dir", s(&data), "--graph-file", s(&data.join("graph.txt")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sample_stats_reports_json() {
    let out = hetmotion(&["sample-stats", "--samples", "200", "--json", "--seed", "3"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["full"]["vertices_mean"], 54.0);
    assert_eq!(v["sampled"]["samples"], 200);
    let out = hetmotion(&["sample-stats", "--samples", "50", "--max-vertices", "1"]);
    assert!(out.status.success());
}
