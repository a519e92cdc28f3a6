use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_locmix"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn report(out: &Output) -> Value {
    let v: Value = serde_json::from_slice(&out.stdout).expect("json report on stdout");
    v["body"]["report"].clone()
}

const K2: &str = r#"{"type": "hardcore", "n": 2, "edges": [[0, 1]], "lambda": 1.0}"#;
const C6: &str = r#"{"type": "hardcore", "n": 6, "edges": [[0,1],[1,2],[2,3],[3,4],[4,5],[5,0]], "lambda": 1.0}"#;

#[test]
fn analyze_hardcore_edge() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "k2.json", K2);
    let out = run(&["analyze", "--model", m.to_str().unwrap(), "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    // States 00, 10, 01 are uniform; the antisymmetric mode has eigenvalue 3/4.
    assert!((r["gap"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    let upper = r["mlsi_upper"].as_f64().unwrap();
    assert!(upper >= 0.25 - 1e-9 && upper <= 1.0);
    let mix = &r["mixing"][0];
    assert_eq!(mix["eps"].as_f64(), Some(0.25));
    assert!(mix["steps"].as_u64().unwrap() >= 1);
}

#[test]
fn analyze_free_spins_gap_is_one_over_n() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "j0.json", r#"{"type": "ising", "n": 3, "J": [[0,0,0],[0,0,0],[0,0,0]]}"#);
    let out = run(&["analyze", "--model", m.to_str().unwrap(), "--seed", "1"]);
    assert!(out.status.success());
    assert!((report(&out)["gap"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn malformed_model_exits_two_with_position() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "bad.json", "{\"type\": \"ising\", \"n\": 2,\n \"J\": [[0, 0] [0, 0]]}");
    let out = run(&["analyze", "--model", m.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "k2.json", K2);
    let m = m.to_str().unwrap();
    assert_eq!(run(&["analyze", "--model", m]).status.code(), Some(2), "seed is mandatory");
    assert_eq!(run(&["analyze", "--model", m, "--seed", "1", "--tol.grad", "1e-20"]).status.code(), Some(2));
    assert_eq!(run(&["certify", "--model", m, "--seed", "1", "--cert", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["pipeline", "--seed", "1", "--name", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn sampled_kernel_failing_reversibility_exits_four() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "k2.json", K2);
    let out = run(&["analyze", "--model", m.to_str().unwrap(), "--seed", "1", "--chain", "rgd", "--budget.samples", "50"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detailed balance"));
}

#[test]
fn certify_pinnings_against_claim() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "k2.json", K2);
    let out = run(&["certify", "--model", m.to_str().unwrap(), "--seed", "1", "--cert", "si-pinnings"]);
    assert!(out.status.success());
    let c = &report(&out)["certificates"][0];
    // Threshold degree floors at 3: λ_c(3) = 4, so δ = 3/4.
    assert!((c["claimed"].as_f64().unwrap() - 192.0).abs() < 1e-9);
    assert_eq!(c["pass"], Value::Bool(true));
}

#[test]
fn certify_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "p.json", r#"{"type": "ising", "n": 3, "J": [[0,0,0],[0,0,0],[0,0,0]], "field": [0.3, -0.5, 0.1]}"#);
    let args = ["certify", "--model", m.to_str().unwrap(), "--seed", "9", "--cert", "ent-stab-h", "--directions", "20"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_negative_fields_on_cycle() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "c6.json", C6);
    let trace = dir.path().join("trace.jsonl");
    let out = run(&[
        "simulate", "--model", m.to_str().unwrap(), "--seed", "3", "--scheme", "negative-fields", "--horizon", "2",
        "--paths", "2000", "--trace", trace.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert!(r["martingale_z"].as_f64().unwrap() <= 4.0);
    assert!(std::fs::metadata(&trace).unwrap().len() > 0);
}

#[test]
fn pipeline_sk_reports_bound_and_bracket() {
    let dir = TempDir::new().unwrap();
    // Rank one, operator norm 1/4.
    let m = write(
        dir.path(),
        "sk.json",
        r#"{"type": "ising", "n": 4, "J": [[0.0625,0.0625,0.0625,0.0625],[0.0625,0.0625,0.0625,0.0625],[0.0625,0.0625,0.0625,0.0625],[0.0625,0.0625,0.0625,0.0625]]}"#,
    );
    let out = run(&["pipeline", "--name", "theorem-sk", "--model", m.to_str().unwrap(), "--seed", "2", "--budget.restarts", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    let bound = r["assembled_bound"].as_f64().unwrap();
    assert!((bound - 0.125).abs() < 1e-12);
    assert!(r["brackets"]["exact_gap"].as_f64().unwrap() >= bound);
}

#[test]
fn pipeline_non_unique_hardcore_exits_three() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "p4.json", r#"{"type": "hardcore", "n": 4, "edges": [[0,1],[1,2],[2,3]], "lambda": 5.0}"#);
    let out = run(&["pipeline", "--name", "hardcore", "--model", m.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("uniqueness"));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "k2.json", K2);
    let cfg = write(
        dir.path(),
        "run.json",
        r#"{"model": "k2.json", "seed": 5, "chain": "l-glauber", "l": 2, "mix_eps": [0.25], "budget": {"restarts": 4}}"#,
    );
    let out = run(&["analyze", "--config", cfg.to_str().unwrap(), "--seed", "6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"].as_u64(), Some(6));
    assert_eq!(v["body"]["settings"]["budget_restarts"].as_u64(), Some(4));
    assert_eq!(v["version"].as_str(), Some(env!("CARGO_PKG_VERSION")));
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    // 2-Glauber on two sites resamples everything: one step mixes exactly.
    assert!((v["body"]["report"]["gap"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let bad = write(dir.path(), "bad.json", r#"{"seed": 1, "colour": "blue"}"#);
    assert_eq!(run(&["analyze", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "c6.json", C6);
    let args = ["simulate", "--model", m.to_str().unwrap(), "--seed", "8", "--scheme", "negative-fields", "--paths", "300"];
    let one = bin().args(args).env("LOCMIX_THREADS", "1").output().unwrap();
    let four = bin().args(args).env("LOCMIX_THREADS", "4").output().unwrap();
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
    let bad = bin().args(args).env("LOCMIX_THREADS", "zero").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn out_and_csv_files() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "k2.json", K2);
    let rep = dir.path().join("r.json");
    let csv = dir.path().join("k.csv");
    let out = run(&[
        "analyze", "--model", m.to_str().unwrap(), "--seed", "1", "--out", rep.to_str().unwrap(), "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(v["body"]["report"]["states"].as_u64(), Some(3));
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().count(), 1 + 3);
    assert!(table.starts_with("state,"));
}

#[test]
fn verify_small_suite_passes() {
    let out = run(&["verify", "--seed", "2", "--measures", "4", "--functions", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r["failures"].as_u64(), Some(0));
    assert!(!r["known_counterexamples"].as_array().unwrap().is_empty());
}
