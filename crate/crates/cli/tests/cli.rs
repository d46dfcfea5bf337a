use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_consolidate"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn config(drainage: &str, extra: &str) -> String {
    format!(
        r#"{{
  "schema_version": 1,
  "problem": {{"height": 1.0, "cv": 0.6, "drainage": "{drainage}", "t_max": 1.0}},
  "grid": {{"n_z": 10, "n_t": 10}},
  {extra}
  "output": {{"dir": "unused"}}
}}"#
    )
}

fn forward_config(epochs: usize) -> String {
    config(
        "top_only",
        &format!(
            r#""network": {{"hidden_layers": 2, "units": 6}},
  "training": {{"mode": "forward", "epochs": {epochs}, "batch_size": 8, "learning_rate": 0.001,
               "n_collocation": 50, "seed": 3}},"#
        ),
    )
}

fn inverse_config(epochs: usize) -> String {
    config(
        "top_and_bottom",
        &format!(
            r#""network": {{"hidden_layers": 2, "units": 6}},
  "training": {{"mode": "inverse", "epochs": {epochs}, "batch_size": 10, "learning_rate": 0.0001,
               "sample_size": 30, "seed": 4}},"#
        ),
    )
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_full_grid_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &config("top_only", ""));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["--quiet", "generate", "--config", s(&cfg), "--out-dir", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = std::fs::read(a.join("analytic.csv")).unwrap();
    assert_eq!(csv, std::fs::read(b.join("analytic.csv")).unwrap());
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert_eq!(text.lines().next(), Some("z,t,p_ratio"));
    let summary = json(&a.join("summary.json"));
    assert_eq!(summary["rows"], 100);
    assert_eq!(summary["config"]["grid"]["n_z"], 10);
    assert!(summary["metadata"]["duration_seconds"].is_number());
}

#[test]
fn generate_corner_grid() {
    let dir = tempfile::tempdir().unwrap();
    let body = config("top_only", "").replace("\"n_z\": 10, \"n_t\": 10", "\"n_z\": 2, \"n_t\": 2");
    let cfg = write_config(dir.path(), "c.json", &body);
    let out = dir.path().join("o");
    assert!(run(&["generate", "--config", s(&cfg), "--out-dir", s(&out)])
        .status
        .success());
    let text = std::fs::read_to_string(out.join("analytic.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn config_errors_exit_with_code_two_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = config("top_only", "").replace("\"grid\": {\"n_z\": 10, \"n_t\": 10},", "");
    let unknown = config("top_only", "\"bogus\": 1,");
    let version = config("top_only", "").replace("\"schema_version\": 1", "\"schema_version\": 9");
    for (i, body) in [missing, unknown, version].iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.json"), body);
        let o = run(&["generate", "--config", s(&cfg), "--out-dir", s(&out)]);
        assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    }
    // Training command on a config without a training section.
    let cfg = write_config(dir.path(), "plain.json", &config("top_only", ""));
    let o = run(&["train-forward", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    // Inverse config handed to the forward command.
    let cfg = write_config(dir.path(), "inv.json", &inverse_config(1));
    assert_eq!(
        run(&["train-forward", "--config", s(&cfg), "--out-dir", s(&out)])
            .status
            .code(),
        Some(2)
    );
    assert!(!out.exists());
}

#[test]
fn io_errors_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate", "--config", s(&dir.path().join("nope.json"))]);
    assert_eq!(o.status.code(), Some(3));
    // Output directory blocked by a regular file.
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = write_config(dir.path(), "c.json", &config("top_only", ""));
    let o = run(&["generate", "--config", s(&cfg), "--out-dir", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn zero_epoch_forward_run_produces_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "f.json", &forward_config(0));
    let out = dir.path().join("o");
    let o = run(&["--quiet", "train-forward", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(out.join("history.csv")).unwrap(),
        "epoch,mse_p,mse_c,mse_total\n"
    );
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["epochs_run"], 0);
    assert!(summary["l2_error"].as_f64().unwrap() > 0.0);
    assert!(out.join("model.json").exists());
    assert!(out.join("prediction.csv").exists());
}

#[test]
fn training_is_reproducible_and_seed_override_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "f.json", &forward_config(3));
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        let o = run(&["--quiet", "train-forward", "--config", s(&cfg), "--out-dir", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["model.json", "history.csv", "prediction.csv"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let o = run(&[
        "--quiet",
        "train-forward",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&c),
        "--seed",
        "99",
    ]);
    assert!(o.status.success());
    assert_eq!(json(&c.join("summary.json"))["config"]["training"]["seed"], 99);
    assert_ne!(
        std::fs::read(a.join("model.json")).unwrap(),
        std::fs::read(c.join("model.json")).unwrap()
    );
}

#[test]
fn inverse_history_starts_at_unit_cv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "i.json", &inverse_config(2));
    let out = dir.path().join("o");
    let o = run(&["--quiet", "train-inverse", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,mse_p,mse_c,mse_total,cv"));
    let first_cv: f64 = lines.next().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((first_cv - 1.0).abs() < 1e-3);
    let summary = json(&out.join("summary.json"));
    assert!(summary["final_cv"].is_number());
    assert_eq!(summary["command"], "train-inverse");
}

#[test]
fn evaluate_matches_training_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "f.json", &forward_config(2));
    let train = dir.path().join("t");
    let gen = dir.path().join("g");
    assert!(
        run(&["--quiet", "train-forward", "--config", s(&cfg), "--out-dir", s(&train)])
            .status
            .success()
    );
    assert!(run(&["--quiet", "generate", "--config", s(&cfg), "--out-dir", s(&gen)])
        .status
        .success());
    let o = run(&[
        "--quiet",
        "evaluate",
        "--model",
        s(&train.join("model.json")),
        "--reference",
        s(&gen.join("analytic.csv")),
        "--out-dir",
        s(&train),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval = json(&train.join("evaluation.json"));
    let summary = json(&train.join("summary.json"));
    assert_eq!(eval["l2_error"], summary["l2_error"]);
    assert_eq!(eval["slices"].as_array().unwrap().len(), 10);
}

#[test]
fn evaluate_rejects_malformed_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "f.json", &forward_config(0));
    let train = dir.path().join("t");
    assert!(
        run(&["--quiet", "train-forward", "--config", s(&cfg), "--out-dir", s(&train)])
            .status
            .success()
    );
    let bad = write_config(dir.path(), "bad.csv", "a,b\n1,2\n");
    let o = run(&[
        "evaluate",
        "--model",
        s(&train.join("model.json")),
        "--reference",
        s(&bad),
        "--out-dir",
        s(&train),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn oracle_single_solve_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let body = config("top_only", r#""oracle": {"n_z": 321, "dt": 0.00125},"#);
    let cfg = write_config(dir.path(), "o.json", &body);
    let gen = dir.path().join("g");
    let out = dir.path().join("o");
    assert!(run(&["--quiet", "generate", "--config", s(&cfg), "--out-dir", s(&gen)])
        .status
        .success());
    let o = run(&[
        "--quiet",
        "oracle",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&out),
        "--compare",
        s(&gen.join("analytic.csv")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&out.join("summary.json"));
    assert!(summary["max_error_vs_analytic"].as_f64().unwrap() <= 1e-3);
    assert!(summary["comparison"]["max_abs_diff"].as_f64().unwrap() <= 1e-3);
    assert!(!out.join("convergence.csv").exists());
    let fd = std::fs::read_to_string(out.join("fd.csv")).unwrap();
    assert_eq!(fd.lines().count(), 101);
}

#[test]
fn oracle_refinement_writes_convergence_table() {
    let dir = tempfile::tempdir().unwrap();
    let body = config("top_and_bottom", r#""oracle": {"tolerance": 1e-4},"#);
    let cfg = write_config(dir.path(), "o.json", &body);
    let out = dir.path().join("o");
    let o = run(&["--quiet", "oracle", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let ratios: Vec<f64> = table
        .lines()
        .skip(1)
        .filter_map(|l| l.rsplit(',').next().and_then(|r| r.parse().ok()))
        .collect();
    let tail = &ratios[ratios.len() - 2..];
    assert!(tail.iter().all(|r| (3.0..=5.0).contains(r)), "{ratios:?}");
}
