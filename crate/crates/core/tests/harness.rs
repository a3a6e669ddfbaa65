use latentmech::harness::{run_experiment, run_trial, ScenarioConfig};

const TRIVIAL: &str = r#"{
  "name": "noiseless",
  "d": 3, "k": 2, "n": 2, "p": 2,
  "family": "uniform",
  "eps_mdl": 0.0,
  "delta": 0.1,
  "seed": 5,
  "trials": 4,
  "recovery": {},
  "mechanism": {
    "valuation": "table", "items": 2, "bundle": 3,
    "base": {"kind": "second_price", "reserve": 0.1},
    "support_size": 3, "grid": 4
  },
  "assertions": {"max_failed": 0, "min_recovery_rate": 1.0, "ir_exact": true, "bic_within_bounds": true}
}"#;

#[test]
fn noiseless_run_recovers_exactly() {
    let cfg = ScenarioConfig::from_json(TRIVIAL).unwrap();
    let rep = run_experiment(&cfg).unwrap();
    assert!(rep.passed, "{:?}", rep.assertions);
    for t in &rep.trials {
        assert!(t.failed.is_none());
        let r = t.recovery.as_ref().unwrap();
        assert!(r.errors.iter().all(|&e| e <= 1e-8));
        let m = t.mechanism.as_ref().unwrap();
        assert_eq!(m.zeta, 0.0);
        assert_eq!(m.ir_violation, [0.0; 3]);
        assert!(m.eta_measured <= m.eta_predicted);
        assert!(m.eta_predicted < 1e-6);
    }
}

#[test]
fn toy_revenue_clears_the_floor_in_every_trial() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/toy.json");
    let cfg = ScenarioConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
    let rep = run_experiment(&cfg).unwrap();
    assert_eq!(rep.trials.len(), cfg.trials);
    for t in &rep.trials {
        let m = t.mechanism.as_ref().unwrap();
        assert!(m.revenue >= m.base_revenue - m.revenue_deficit_bound);
        assert!(m.revenue_ok && m.ir_ok && m.bic_ok);
    }
}

#[test]
fn reports_are_reproducible() {
    let cfg = ScenarioConfig::from_json(TRIVIAL).unwrap();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(run_trial(&cfg, 2), a.trials[2]);

    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path()).unwrap();
    for f in ["report.json", "aggregate.csv", "trials.csv"] {
        assert!(dir.path().join(f).exists());
    }
    let csv = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), cfg.trials + 1);
}

#[test]
fn bad_configs_are_rejected() {
    let noisy = TRIVIAL.replace("\"eps_mdl\": 0.0,", "\"eps_mdl\": 0.0, \"eps_nq\": 0.1,");
    assert!(ScenarioConfig::from_json(&noisy).is_err());
    let wide = TRIVIAL.replace("\"d\": 3", "\"d\": 5");
    assert!(ScenarioConfig::from_json(&wide).is_err());
    let unknown = TRIVIAL.replace("\"seed\": 5,", "\"seed\": 5, \"colour\": 1,");
    assert!(ScenarioConfig::from_json(&unknown).is_err());
}
