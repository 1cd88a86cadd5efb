use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn alcs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alcs")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = alcs(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn json_file(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Dataset, dense model and latency model in a fresh directory.
fn fixture() -> (tempfile::TempDir, f64) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["make-dataset", "--out", "data.alds", "--samples", "160", "--seed", "3"]);
    ok(d, &["train", "--data", "data.alds", "--out", "dense.alcs", "--epochs", "1"]);
    let lat =
        ok(d, &["build-latency-model", "--model", "dense.alcs", "--out", "lat.json", "--runs", "2", "--warmup", "0"]);
    let dense_ms = lat["dense_ms"].as_f64().unwrap();
    (dir, dense_ms)
}

fn prune_args(budget: &str, out: &str) -> Vec<String> {
    [
        "prune",
        "--model",
        "dense.alcs",
        "--data",
        "data.alds",
        "--latency",
        "lat.json",
        "--budget-ms",
        budget,
        "--out",
        out,
        "--admm-epochs",
        "2",
        "--ft-epochs",
        "1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_prune(dir: &Path, budget: f64, out: &str) -> Value {
    let args = prune_args(&budget.to_string(), out);
    ok(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn prune_verify_report_pipeline() {
    let (dir, dense_ms) = fixture();
    let d = dir.path();
    let budget = 0.5 * dense_ms;
    let summary = run_prune(d, budget, "pruned.alcs");
    assert!(summary["estimated_latency_ms"].as_f64().unwrap() <= budget);

    let again = run_prune(d, budget, "again.alcs");
    assert_eq!(summary["nonzeros"], again["nonzeros"]);
    assert_eq!(std::fs::read(d.join("pruned.alcs")).unwrap(), std::fs::read(d.join("again.alcs")).unwrap());

    let report = ok(d, &["verify", "--model", "pruned.alcs", "--out", "verify.json"]);
    assert_eq!(report["passed"], true);
    assert!(report["max_rel_err"].as_f64().unwrap() <= 1e-5);

    let out = alcs(d, &["report", "--log", "pruned.alcs.log.jsonl"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("iteration,loss,aug_loss,w_u_gap,nnz,est_latency_ms\n"));
    assert_eq!(csv.lines().count(), 3);

    let infer = ok(d, &["infer", "--model", "pruned.alcs", "--data", "data.alds", "--threads", "1"]);
    assert_eq!(infer["samples"], 32);

    let manifest = json_file(d.join("pruned.alcs.manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config"]["rho"], 0.01);
    for artifact in manifest["outputs"].as_array().unwrap().iter().chain(manifest["inputs"].as_array().unwrap()) {
        let path = d.join(artifact["path"].as_str().unwrap());
        let digest = artifact["sha256"].as_str().unwrap();
        assert_eq!(digest.len(), 64);
        assert!(path.exists(), "{}", path.display());
    }
}

#[test]
fn generous_budget_keeps_every_unit() {
    let (dir, dense_ms) = fixture();
    let summary = run_prune(dir.path(), dense_ms * 2.0, "all.alcs");
    assert_eq!(summary["nonzeros"], summary["params"]);
}

#[test]
fn zero_budget_is_infeasible() {
    let (dir, _) = fixture();
    let args = prune_args("0", "none.alcs");
    let out = alcs(dir.path(), &args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau + sum(t_1)"));
    assert!(!dir.path().join("none.alcs").exists());
    assert_eq!(json_file(dir.path().join("none.alcs.manifest.json"))["status"], "failed");
}

#[test]
fn corrupted_model_is_a_decode_error() {
    let (dir, _) = fixture();
    let path = dir.path().join("dense.alcs");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[20] ^= 0x10;
    std::fs::write(dir.path().join("bad.alcs"), bytes).unwrap();
    let out = alcs(dir.path(), &["verify", "--model", "bad.alcs"]);
    assert_eq!(out.status.code(), Some(3));
    let out = alcs(dir.path(), &["verify", "--model", "data.alds"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = alcs(dir.path(), &["bench-layer", "--shape", "1,2,3", "--out", "p.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = alcs(dir.path(), &["prune", "--model", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = alcs(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_layer_writes_a_profile() {
    let dir = tempfile::tempdir().unwrap();
    let summary = ok(
        dir.path(),
        &["bench-layer", "--shape", "8,4,3,3,8,8,1,1", "--out", "p.json", "--runs", "3", "--warmup", "1"],
    );
    assert_eq!(summary["knots"].as_array().unwrap().len(), 11);
    let profile = json_file(dir.path().join("p.json"));
    assert_eq!(profile["tau_ms"], 0.0);
    assert_eq!(profile["layers"][0]["shape"], serde_json::json!([8, 4, 3, 3, 8, 8, 1, 1]));
    assert_eq!(profile["meta"]["runs"], 3);
}
