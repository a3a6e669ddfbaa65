use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{round_dist, tv_distance, DiscreteDist, PriorOracle};
use crate::error::{Error, Result};
use crate::matrix::{sigma_min_p, Mat};
use crate::mechanism::{
    audit_bic, audit_ir, build_robust, revenue, AuctionOutcome, BicAudit, LatentValuation, Mechanism, RevenueMode,
    RobustOptions,
};
use crate::mechanism::table::{random_repaired, second_price_with_reserve};
use crate::protocol::{bidder_seed, zeta_from_sigma, MaterializedOracle, ProtocolConfig, Recoverer};

use super::generate::{gen_archetypes, gen_dhat, gen_perturbed_dist, trial_rng, ArchetypeFamily};
use super::scenario::{MechanismKind, MechanismSpec, ScenarioConfig};

/// Slack for floating-point comparisons of measured values against bounds.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    /// Per-bidder lp error of the recovered latent vector.
    pub errors: Vec<f64>,
    pub zeta_bound: f64,
    pub queries: Vec<usize>,
    pub within_bound: bool,
    pub scores_converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismRecord {
    pub zeta: f64,
    pub delta: f64,
    pub ell: Vec<f64>,
    pub a_norm: f64,
    pub lipschitz: f64,
    pub rho: f64,
    pub base_ir_violation: f64,
    pub base_eta: f64,
    /// IR violations of the round-up stage, the distance gate and the
    /// composed mechanism.
    pub ir_violation: [f64; 3],
    pub m1_eta: f64,
    pub m1_eta_bound: f64,
    pub eta_max: f64,
    pub eta_measured: f64,
    pub mu_measured: f64,
    pub eta_predicted: f64,
    pub mu_predicted: f64,
    pub revenue: f64,
    pub base_revenue: f64,
    pub revenue_deficit_bound: f64,
    pub ir_ok: bool,
    pub m1_ok: bool,
    pub bic_ok: bool,
    pub revenue_ok: bool,
    pub auction: AuctionOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub failed: Option<String>,
    pub recovery: Option<RecoveryRecord>,
    pub mechanism: Option<MechanismRecord>,
}

/// Flat summary; every rate counts failed trials in its denominator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub failed: usize,
    pub recovery_rate: Option<f64>,
    pub mean_error: Option<f64>,
    pub stderr_error: Option<f64>,
    pub mean_zeta_bound: Option<f64>,
    pub mean_queries: Option<f64>,
    pub max_queries: Option<usize>,
    pub ir_rate: Option<f64>,
    pub m1_rate: Option<f64>,
    pub bic_rate: Option<f64>,
    pub revenue_rate: Option<f64>,
    pub mean_eta: Option<f64>,
    pub stderr_eta: Option<f64>,
    pub mean_eta_predicted: Option<f64>,
    pub mean_revenue: Option<f64>,
    pub stderr_revenue: Option<f64>,
    pub mean_revenue_floor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ScenarioConfig,
    pub trials: Vec<TrialRecord>,
    pub aggregate: Aggregate,
    pub assertions: Vec<AssertionOutcome>,
    pub passed: bool,
}

#[derive(Serialize)]
struct TrialRow {
    trial: usize,
    failed: bool,
    max_error: Option<f64>,
    zeta_bound: Option<f64>,
    queries: Option<usize>,
    within_bound: Option<bool>,
    ir_violation: Option<f64>,
    eta_measured: Option<f64>,
    mu_measured: Option<f64>,
    eta_predicted: Option<f64>,
    mu_predicted: Option<f64>,
    revenue: Option<f64>,
    revenue_floor: Option<f64>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn aggregate_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&self.aggregate)?;
        finish_csv(w)
    }

    pub fn trials_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for t in &self.trials {
            let r = t.recovery.as_ref();
            let m = t.mechanism.as_ref();
            w.serialize(TrialRow {
                trial: t.trial,
                failed: t.failed.is_some(),
                max_error: r.map(|r| max_of(&r.errors)),
                zeta_bound: r.map(|r| r.zeta_bound),
                queries: r.and_then(|r| r.queries.iter().copied().max()),
                within_bound: r.map(|r| r.within_bound),
                ir_violation: m.map(|m| max_of(&m.ir_violation)),
                eta_measured: m.map(|m| m.eta_measured),
                mu_measured: m.map(|m| m.mu_measured),
                eta_predicted: m.map(|m| m.eta_predicted),
                mu_predicted: m.map(|m| m.mu_predicted),
                revenue: m.map(|m| m.revenue),
                revenue_floor: m.map(|m| m.base_revenue - m.revenue_deficit_bound),
            })?;
        }
        finish_csv(w)
    }

    /// Writes `report.json`, `aggregate.csv` and `trials.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json())?;
        fs::write(dir.join("aggregate.csv"), self.aggregate_csv()?)?;
        fs::write(dir.join("trials.csv"), self.trials_csv()?)?;
        Ok(())
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

fn max_of(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean_stderr(x: &[f64]) -> (Option<f64>, Option<f64>) {
    if x.is_empty() {
        return (None, None);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (Some(mean), Some(0.0));
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

/// State shared by all trials of a fixed design.
struct Design {
    a: Mat,
    sigma: Option<f64>,
    recoverer: Option<Recoverer>,
}

fn needs_sigma(cfg: &ScenarioConfig) -> bool {
    cfg.recovery.is_some() || cfg.mechanism.as_ref().is_some_and(|m| m.zeta.is_none())
}

fn build_design<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Design> {
    let a = gen_archetypes(cfg.family.clone(), cfg.d, cfg.k, rng)?;
    let sigma = if needs_sigma(cfg) {
        Some(sigma_min_p(&a, cfg.p)?.value)
    } else {
        None
    };
    let recoverer = match (&cfg.recovery, sigma) {
        (Some(_), Some(s)) => Some(Recoverer::new(&a, cfg.p)?.with_sigma(s)),
        _ => None,
    };
    Ok(Design { a, sigma, recoverer })
}

fn protocol_config(cfg: &ScenarioConfig) -> Result<ProtocolConfig> {
    let mut pc = ProtocolConfig::new(cfg.p, cfg.k, cfg.n, cfg.delta)?;
    if let Some(r) = &cfg.recovery {
        pc.s_override = r.s_override;
        pc.reps = r.reps;
    }
    Ok(pc)
}

fn base_mechanism<R: Rng + ?Sized>(
    spec: &MechanismSpec,
    dhat: &[DiscreteDist],
    vals: &LatentValuation,
    rng: &mut R,
) -> Result<Arc<dyn Mechanism>> {
    let table = match spec.base {
        MechanismKind::SecondPrice { reserve } => second_price_with_reserve(dhat, vals, spec.bundle, reserve)?,
        MechanismKind::RandomRepaired => random_repaired(dhat, vals, spec.bundle, rng)?,
    };
    Ok(Arc::new(table))
}

/// Smallest regret threshold whose exceedance mass is at most `mu`.
fn eta_at_mu(bic: &BicAudit, mu: f64) -> f64 {
    let mut cands: Vec<f64> = bic.regret.iter().flatten().flatten().copied().filter(|&v| v > 0.0).collect();
    cands.push(0.0);
    cands.sort_by(f64::total_cmp);
    cands.into_iter().find(|&c| bic.mu(c) <= mu).unwrap_or(0.0)
}

type Auction = Box<dyn FnOnce(&[Vec<f64>]) -> Result<AuctionOutcome>>;

/// Latent types drawn from the true priors, or uniform on the cube when
/// there is no mechanism stage.
fn draw_types<R: Rng + ?Sized>(cfg: &ScenarioConfig, truth: Option<&[DiscreteDist]>, rng: &mut R) -> Vec<Vec<f64>> {
    match truth {
        Some(fs) => fs.iter().map(|f| f.sample(rng).to_vec()).collect(),
        None => (0..cfg.n)
            .map(|_| (0..cfg.k).map(|_| rng.random::<f64>()).collect())
            .collect(),
    }
}

fn recover_all(
    cfg: &ScenarioConfig,
    design: &Design,
    types: &[Vec<f64>],
    seed: u64,
) -> Result<(RecoveryRecord, Vec<Vec<f64>>)> {
    let rec = design.recoverer.as_ref().expect("recovery design");
    let pc = protocol_config(cfg)?;
    let mut errors = Vec::with_capacity(cfg.n);
    let mut queries = Vec::with_capacity(cfg.n);
    let mut z_hats = Vec::with_capacity(cfg.n);
    let mut within = true;
    let mut zeta_bound = 0.0;
    for (i, z) in types.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(bidder_seed(seed, i));
        let oracle = MaterializedOracle::synthesize(&design.a, z, cfg.p, cfg.eps_mdl, cfg.eps_nq, &mut rng);
        let out = rec.recover(&oracle, &pc, &mut rng)?;
        errors.push(out.error.unwrap_or(f64::INFINITY));
        queries.push(out.queries_used);
        within &= out.within_bound.unwrap_or(false);
        zeta_bound = out.zeta_bound.unwrap_or(f64::INFINITY);
        z_hats.push(out.z_hat);
    }
    Ok((
        RecoveryRecord {
            errors,
            zeta_bound,
            queries,
            within_bound: within,
            scores_converged: rec.scores_converged,
        },
        z_hats,
    ))
}

/// Default `zeta`: the recovery bound, floored at the model error so the
/// robustification precondition holds.
fn effective_zeta(cfg: &ScenarioConfig, spec: &MechanismSpec, sigma: Option<f64>) -> Result<f64> {
    if let Some(z) = spec.zeta {
        return Ok(z);
    }
    let sigma = sigma.ok_or_else(|| Error::InvalidInput("zeta needs sigma_min".into()))?;
    let z = zeta_from_sigma(sigma, cfg.p, cfg.eps_mdl, cfg.eps_nq)?.max(cfg.eps_mdl);
    if z >= 1.0 {
        return Err(Error::InvalidInput(format!("zeta = {z} leaves no room for a perturbation")));
    }
    Ok(z)
}

fn mechanism_stage<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    spec: &MechanismSpec,
    design: &Design,
    rng: &mut R,
) -> Result<(MechanismRecord, Vec<DiscreteDist>, Auction)> {
    let vals = LatentValuation::new(spec.valuation_spec(), design.a.clone())?;
    let zeta = effective_zeta(cfg, spec, design.sigma)?;
    let dhat: Vec<DiscreteDist> = (0..cfg.n)
        .map(|_| gen_dhat(cfg.k, spec.support_size, spec.grid, rng))
        .collect::<Result<_>>()?;
    let mhat = base_mechanism(spec, &dhat, &vals, rng)?;
    let base_ir_violation = audit_ir(mhat.as_ref(), &dhat, &vals)?;
    let base_eta = audit_bic(mhat.as_ref(), &dhat, &vals, None)?.eta();
    let truth: Vec<DiscreteDist> = dhat
        .iter()
        .map(|d| gen_perturbed_dist(d, zeta, cfg.p, rng).map(|pd| pd.dist))
        .collect::<Result<_>>()?;
    let priors: Vec<Arc<dyn PriorOracle>> = dhat.iter().map(|d| Arc::new(d.clone()) as Arc<dyn PriorOracle>).collect();
    let lipschitz = vals.spec.lipschitz;
    let a_norm = vals.a_norm();
    let opts = RobustOptions {
        delta: spec.delta,
        ell: None,
    };
    let rm = build_robust(mhat.clone(), priors, zeta, cfg.eps_mdl, cfg.p, lipschitz, a_norm, cfg.k, &opts, rng)?;
    let rp = rm.params.rounding();
    let dhat_r: Vec<DiscreteDist> = dhat.iter().map(|d| round_dist(d, &rp)).collect();
    let truth_r: Vec<DiscreteDist> = truth.iter().map(|d| round_dist(d, &rp)).collect();
    let rho: f64 = dhat_r.iter().zip(&truth_r).map(|(a, b)| tv_distance(a, b)).sum();

    let ir_violation = [
        audit_ir(rm.m1().as_ref(), &dhat_r, &vals)?,
        audit_ir(rm.m2().as_ref(), &truth_r, &vals)?,
        audit_ir(rm.composed().as_ref(), &truth, &vals)?,
    ];
    let m1_eta = audit_bic(rm.m1().as_ref(), &dhat_r, &vals, None)?.eta();
    let m1_eta_bound = 2.0 * cfg.k as f64 * a_norm * lipschitz * rm.params.delta + base_eta;
    let bic = audit_bic(rm.composed().as_ref(), &truth, &vals, None)?;
    let (eta_predicted, mu_predicted) = rm.params.predicted(Some(rho));
    let eta_max = bic.eta();
    let mu_measured = bic.mu(eta_predicted);
    let eta_measured = eta_at_mu(&bic, mu_predicted);
    let rev = revenue(rm.composed().as_ref(), &truth, RevenueMode::Exact, None)?.value;
    let base_revenue = revenue(mhat.as_ref(), &dhat, RevenueMode::Exact, None)?.value;
    let deficit = rm.params.revenue_deficit(Some(rho));

    let record = MechanismRecord {
        zeta,
        delta: rm.params.delta,
        ell: rm.params.ell.clone(),
        a_norm,
        lipschitz,
        rho,
        base_ir_violation,
        base_eta,
        ir_violation,
        m1_eta,
        m1_eta_bound,
        eta_max,
        eta_measured,
        mu_measured,
        eta_predicted,
        mu_predicted,
        revenue: rev,
        base_revenue,
        revenue_deficit_bound: deficit,
        ir_ok: ir_violation.iter().all(|&v| v == 0.0),
        m1_ok: m1_eta <= m1_eta_bound + BOUND_SLACK,
        bic_ok: eta_measured <= eta_predicted + BOUND_SLACK && mu_measured <= mu_predicted + BOUND_SLACK,
        revenue_ok: rev >= base_revenue - deficit - BOUND_SLACK,
        auction: AuctionOutcome {
            bundles: Vec::new(),
            payments: Vec::new(),
            excluded: Vec::new(),
        },
    };
    let run = Box::new(move |reports: &[Vec<f64>]| rm.run_auction(reports));
    Ok((record, truth, run))
}

fn trial_inner(cfg: &ScenarioConfig, t: usize, shared: Option<&Design>) -> Result<TrialRecord> {
    let mut rng = trial_rng(cfg.seed, t);
    let own;
    let design = match shared {
        Some(d) => d,
        None => {
            own = build_design(cfg, &mut rng)?;
            &own
        }
    };
    let seed = rng.next_u64();
    let mut record = TrialRecord {
        trial: t,
        failed: None,
        recovery: None,
        mechanism: None,
    };
    let mut stage = None;
    let mut truth = None;
    let mut auction = None;
    if let Some(spec) = &cfg.mechanism {
        let (s, f, run) = mechanism_stage(cfg, spec, design, &mut rng)?;
        stage = Some(s);
        truth = Some(f);
        auction = Some(run);
    }
    let types = draw_types(cfg, truth.as_deref(), &mut rng);
    let reports = if cfg.recovery.is_some() {
        let (rec, z_hats) = recover_all(cfg, design, &types, seed)?;
        record.recovery = Some(rec);
        z_hats
    } else {
        types
    };
    if let (Some(mut m), Some(run)) = (stage, auction) {
        m.auction = run(&reports)?;
        record.mechanism = Some(m);
    }
    Ok(record)
}

/// Runs one trial; stage errors mark the trial failed instead of aborting.
pub fn run_trial(cfg: &ScenarioConfig, t: usize) -> TrialRecord {
    run_trial_with(cfg, t, None)
}

fn run_trial_with(cfg: &ScenarioConfig, t: usize, shared: Option<&Design>) -> TrialRecord {
    trial_inner(cfg, t, shared).unwrap_or_else(|e| TrialRecord {
        trial: t,
        failed: Some(e.to_string()),
        recovery: None,
        mechanism: None,
    })
}

fn rate(trials: &[TrialRecord], f: impl Fn(&TrialRecord) -> Option<bool>) -> Option<f64> {
    let hits = trials.iter().filter(|t| f(t) == Some(true)).count();
    Some(hits as f64 / trials.len() as f64)
}

fn aggregate(cfg: &ScenarioConfig, trials: &[TrialRecord]) -> Aggregate {
    let recs: Vec<&RecoveryRecord> = trials.iter().filter_map(|t| t.recovery.as_ref()).collect();
    let mechs: Vec<&MechanismRecord> = trials.iter().filter_map(|t| t.mechanism.as_ref()).collect();
    let errs: Vec<f64> = recs.iter().map(|r| max_of(&r.errors)).collect();
    let (mean_error, stderr_error) = mean_stderr(&errs);
    let queries: Vec<f64> = recs.iter().flat_map(|r| r.queries.iter().map(|&q| q as f64)).collect();
    let etas: Vec<f64> = mechs.iter().map(|m| m.eta_measured).collect();
    let (mean_eta, stderr_eta) = mean_stderr(&etas);
    let revs: Vec<f64> = mechs.iter().map(|m| m.revenue).collect();
    let (mean_revenue, stderr_revenue) = mean_stderr(&revs);
    let with_rec = cfg.recovery.is_some();
    let with_mech = cfg.mechanism.is_some();
    let pick = |on: bool, v: Option<f64>| if on { v } else { None };
    Aggregate {
        trials: trials.len(),
        failed: trials.iter().filter(|t| t.failed.is_some()).count(),
        recovery_rate: pick(with_rec, rate(trials, |t| t.recovery.as_ref().map(|r| r.within_bound))),
        mean_error,
        stderr_error,
        mean_zeta_bound: mean_stderr(&recs.iter().map(|r| r.zeta_bound).collect::<Vec<_>>()).0,
        mean_queries: mean_stderr(&queries).0,
        max_queries: recs.iter().flat_map(|r| r.queries.iter().copied()).max(),
        ir_rate: pick(with_mech, rate(trials, |t| t.mechanism.as_ref().map(|m| m.ir_ok))),
        m1_rate: pick(with_mech, rate(trials, |t| t.mechanism.as_ref().map(|m| m.m1_ok))),
        bic_rate: pick(with_mech, rate(trials, |t| t.mechanism.as_ref().map(|m| m.bic_ok))),
        revenue_rate: pick(with_mech, rate(trials, |t| t.mechanism.as_ref().map(|m| m.revenue_ok))),
        mean_eta,
        stderr_eta,
        mean_eta_predicted: mean_stderr(&mechs.iter().map(|m| m.eta_predicted).collect::<Vec<_>>()).0,
        mean_revenue,
        stderr_revenue,
        mean_revenue_floor: mean_stderr(
            &mechs
                .iter()
                .map(|m| m.base_revenue - m.revenue_deficit_bound)
                .collect::<Vec<_>>(),
        )
        .0,
    }
}

fn check_assertions(cfg: &ScenarioConfig, agg: &Aggregate) -> Vec<AssertionOutcome> {
    let a = &cfg.assertions;
    let mut out = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        out.push(AssertionOutcome {
            name: name.into(),
            passed,
            detail,
        })
    };
    if let Some(min) = a.min_recovery_rate {
        let r = agg.recovery_rate.unwrap_or(0.0);
        push("min_recovery_rate", r >= min, format!("rate {r} vs minimum {min}"));
    }
    if let Some(max) = a.max_failed {
        push("max_failed", agg.failed <= max, format!("{} failed, at most {max} allowed", agg.failed));
    }
    let all = |name: &str, on: bool, r: Option<f64>, out: &mut dyn FnMut(&str, bool, String)| {
        if on {
            let r = r.unwrap_or(0.0);
            out(name, r == 1.0, format!("holds in a {r} fraction of trials"));
        }
    };
    all("ir_exact", a.ir_exact, agg.ir_rate, &mut push);
    all("bic_within_bounds", a.bic_within_bounds, agg.bic_rate, &mut push);
    all("revenue_within_bound", a.revenue_within_bound, agg.revenue_rate, &mut push);
    out
}

/// Runs every trial in parallel and assembles the report in trial order.
/// The report depends only on the config, never on thread count or timing.
pub fn run_experiment(cfg: &ScenarioConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let fixed = cfg.fixed_design || matches!(cfg.family, ArchetypeFamily::FromFile(_));
    let shared = if fixed {
        let mut rng = trial_rng(cfg.seed, usize::MAX - 1);
        match build_design(cfg, &mut rng) {
            Ok(d) => Some(d),
            Err(e) => {
                let msg = e.to_string();
                let trials: Vec<TrialRecord> = (0..cfg.trials)
                    .map(|t| TrialRecord {
                        trial: t,
                        failed: Some(msg.clone()),
                        recovery: None,
                        mechanism: None,
                    })
                    .collect();
                return Ok(finish(cfg, trials));
            }
        }
    } else {
        None
    };
    let trials: Vec<TrialRecord> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial_with(cfg, t, shared.as_ref()))
        .collect();
    Ok(finish(cfg, trials))
}

fn finish(cfg: &ScenarioConfig, trials: Vec<TrialRecord>) -> ExperimentReport {
    let aggregate = aggregate(cfg, &trials);
    let assertions = check_assertions(cfg, &aggregate);
    let passed = assertions.iter().all(|a| a.passed);
    ExperimentReport {
        config: cfg.clone(),
        trials,
        aggregate,
        assertions,
        passed,
    }
}
