use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use latentmech::dist::{prokhorov_distance, PROKHOROV_TOL};
use latentmech::harness::{run_experiment, run_trial, ScenarioConfig};
use latentmech::io::{read_dist, read_mat};
use latentmech::protocol::{bidder_seed, MaterializedOracle, ProtocolConfig, RecoveryResult, Recoverer};
use latentmech::scores::importance_scores;
use latentmech::{NormIndex, Result};

#[derive(Parser)]
#[command(name = "latentmech", version, about = "Latent type recovery and robust mechanism audits")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Importance scores (leverage or Lewis weights) of a matrix, as CSV.
    Scores {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value = "2")]
        p: NormIndex,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recovers latent vectors of synthetic bidders from sampled entries.
    Recover {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value = "2")]
        p: NormIndex,
        #[arg(long, default_value_t = 0.0)]
        eps_mdl: f64,
        #[arg(long, default_value_t = 0.0)]
        eps_nq: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless every bidder is within the error bound.
        #[arg(long)]
        assert_bound: bool,
    },
    /// Prokhorov distance between two distribution files.
    Prokhorov {
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        g: PathBuf,
        #[arg(long, default_value = "2")]
        p: NormIndex,
        #[arg(long, default_value_t = PROKHOROV_TOL)]
        tol: f64,
    },
    /// Builds and audits the robust mechanism of one scenario trial.
    MechAudit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a scenario and writes `report.json`, `aggregate.csv` and `trials.csv`.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>, trials: Option<usize>) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::from_json(&fs::read_to_string(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RecoverReport {
    p: NormIndex,
    s: usize,
    reps: usize,
    bidders: Vec<RecoveryResult>,
}

#[derive(Serialize)]
struct AuditBounds {
    eta: f64,
    mu: f64,
    revenue_floor: f64,
    m1_eta: f64,
}

#[derive(Serialize)]
struct AuditReport {
    ir_violation: f64,
    eta: f64,
    mu: f64,
    revenue: f64,
    bounds: AuditBounds,
    passed: bool,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Command::Scores { matrix, p, out } => {
            let a = read_mat(&matrix)?;
            let (sv, converged) = importance_scores(&a, p)?;
            if !converged {
                eprintln!("warning: Lewis iteration stopped at residual {:e}", sv.residual);
            }
            let mut text = String::from("index,score\n");
            for (i, s) in sv.scores.iter().enumerate() {
                text.push_str(&format!("{i},{s}\n"));
            }
            emit(&text, out.as_deref())?;
            Ok(true)
        }
        Command::Recover {
            matrix,
            p,
            eps_mdl,
            eps_nq,
            delta,
            n,
            seed,
            out,
            assert_bound,
        } => {
            let a = read_mat(&matrix)?;
            let cfg = ProtocolConfig::new(p, a.cols(), n, delta)?;
            let rec = Recoverer::new(&a, p)?.compute_sigma()?;
            let mut bidders = Vec::with_capacity(n);
            for i in 0..n {
                let mut rng = ChaCha8Rng::seed_from_u64(bidder_seed(seed, i));
                let z: Vec<f64> = (0..a.cols()).map(|_| rng.random::<f64>()).collect();
                let oracle = MaterializedOracle::synthesize(&a, &z, p, eps_mdl, eps_nq, &mut rng);
                bidders.push(rec.recover(&oracle, &cfg, &mut rng)?);
            }
            let ok = bidders.iter().all(|b| b.within_bound == Some(true));
            let report = RecoverReport {
                p,
                s: rec.sketch_size(&cfg),
                reps: cfg.reps(),
                bidders,
            };
            emit(&(serde_json::to_string_pretty(&report)? + "\n"), out.as_deref())?;
            Ok(ok || !assert_bound)
        }
        Command::Prokhorov { f, g, p, tol } => {
            let f = read_dist(&f)?;
            let g = read_dist(&g)?;
            let d = prokhorov_distance(&f, &g, p, tol)?;
            println!("{}", serde_json::json!({ "p": p, "distance": d, "tol": tol }));
            Ok(true)
        }
        Command::MechAudit { config, trial, seed, out } => {
            let cfg = load_config(&config, seed, None)?;
            if cfg.mechanism.is_none() {
                return Err(latentmech::Error::InvalidInput("config has no mechanism section".into()));
            }
            let rec = run_trial(&cfg, trial);
            if let Some(msg) = rec.failed {
                return Err(latentmech::Error::InvalidInput(format!("trial failed: {msg}")));
            }
            let m = rec.mechanism.expect("mechanism record");
            let report = AuditReport {
                ir_violation: m.ir_violation.iter().copied().fold(0.0, f64::max),
                eta: m.eta_measured,
                mu: m.mu_measured,
                revenue: m.revenue,
                bounds: AuditBounds {
                    eta: m.eta_predicted,
                    mu: m.mu_predicted,
                    revenue_floor: m.base_revenue - m.revenue_deficit_bound,
                    m1_eta: m.m1_eta_bound,
                },
                passed: m.ir_ok && m.m1_ok && m.bic_ok && m.revenue_ok,
            };
            emit(&(serde_json::to_string_pretty(&report)? + "\n"), out.as_deref())?;
            Ok(report.passed)
        }
        Command::Experiment {
            config,
            out,
            seed,
            trials,
        } => {
            let cfg = load_config(&config, seed, trials)?;
            let report = run_experiment(&cfg)?;
            report.write(&out)?;
            for a in &report.assertions {
                eprintln!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
            }
            Ok(report.passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
