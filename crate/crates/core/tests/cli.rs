use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use latentmech::harness::{run_experiment, ScenarioConfig};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentmech")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).display().to_string()
}

const SMALL_RECOVERY: &str = r#"{
  "name": "small recovery",
  "d": 400, "k": 5, "n": 3, "p": 2,
  "family": "gaussian",
  "fixed_design": true,
  "eps_mdl": 0.1,
  "delta": 0.1,
  "seed": 19,
  "trials": 10,
  "recovery": {},
  "assertions": {"min_recovery_rate": 0.9, "max_failed": 0}
}"#;

#[test]
fn scores_sum_to_rank() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("a.csv");
    fs::write(&m, "4,2\n1,0\n0,1\n1,1\n0.5,-2\n").unwrap();
    let out = dir.path().join("scores.csv");
    for p in ["1", "2", "3"] {
        let o = bin(&["scores", "--matrix", m.to_str().unwrap(), "--p", p, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("index,score"));
        let total: f64 = lines.map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 2.0).abs() < 1e-4, "p = {p}: {total}");
    }
}

#[test]
fn recover_reports_each_bidder() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("eye.csv");
    fs::write(&m, "3,3\n1,0,0\n0,1,0\n0,0,1\n").unwrap();
    let o = bin(&["recover", "--matrix", m.to_str().unwrap(), "--n", "2", "--seed", "4", "--assert-bound"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let bidders = v["bidders"].as_array().unwrap();
    assert_eq!(bidders.len(), 2);
    for b in bidders {
        assert_eq!(b["within_bound"], Value::Bool(true));
        assert!(b["error"].as_f64().unwrap() <= 1e-9);
    }
}

#[test]
fn prokhorov_between_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.json");
    let g = dir.path().join("g.json");
    fs::write(&f, r#"{"k":1,"support":[[0.0]],"probs":[1.0]}"#).unwrap();
    fs::write(&g, r#"{"k":1,"support":[[0.0],[0.9]],"probs":[0.7,0.3]}"#).unwrap();
    let o = bin(&["prokhorov", "--f", f.to_str().unwrap(), "--g", g.to_str().unwrap(), "--tol", "1e-9"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["distance"].as_f64().unwrap() - 0.3).abs() < 1e-8);
}

#[test]
fn mech_audit_passes_on_toy() {
    let o = bin(&["mech-audit", "--config", &scenario("toy.json"), "--trial", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ir_violation"].as_f64(), Some(0.0));
    assert!(v["eta"].as_f64().unwrap() <= v["bounds"]["eta"].as_f64().unwrap());
    assert_eq!(v["passed"], Value::Bool(true));
}

#[test]
fn experiment_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.json");
    fs::write(&cfg_path, SMALL_RECOVERY).unwrap();
    let out = dir.path().join("run");
    let o = bin(&["--threads", "2", "experiment", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let lib = run_experiment(&ScenarioConfig::from_json(SMALL_RECOVERY).unwrap()).unwrap();
    assert_eq!(report["aggregate"]["recovery_rate"].as_f64(), lib.aggregate.recovery_rate);
    assert_eq!(fs::read_to_string(out.join("report.json")).unwrap(), lib.to_json());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let strict = SMALL_RECOVERY.replace("\"min_recovery_rate\": 0.9", "\"min_recovery_rate\": 1.5");
    let cfg_path = dir.path().join("strict.json");
    fs::write(&cfg_path, strict).unwrap();
    let out = dir.path().join("run");
    let o = bin(&["experiment", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--trials", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL min_recovery_rate"));

    let o = bin(&["scores", "--matrix", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["mech-audit", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
