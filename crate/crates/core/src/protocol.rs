//! The latent-type query protocol and its error bounds.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sigma_min_p, Mat, RANK_TOL};
use crate::norm::{lp_dist, lp_norm, NormIndex};
use crate::regression::{boosted_solve, EntryOracle};
use crate::scores::{importance_scores, ScoreVector};
use crate::sketch::SamplePlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub p: NormIndex,
    pub k: usize,
    pub n: usize,
    pub delta: f64,
    #[serde(default)]
    pub s_override: Option<usize>,
    #[serde(default)]
    pub reps: Option<usize>,
}

impl ProtocolConfig {
    pub fn new(p: NormIndex, k: usize, n: usize, delta: f64) -> Result<Self> {
        let cfg = ProtocolConfig {
            p,
            k,
            n,
            delta,
            s_override: None,
            reps: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!("delta = {} not in (0,1)", self.delta)));
        }
        if self.k == 0 || self.n == 0 {
            return Err(Error::InvalidInput("k and n must be positive".into()));
        }
        if self.p.as_u32().is_none() {
            return Err(Error::InvalidInput("the protocol needs a finite p".into()));
        }
        Ok(())
    }

    /// Boosting repetitions, `ceil(ln(n/delta))` unless overridden.
    pub fn reps(&self) -> usize {
        self.reps
            .unwrap_or_else(|| ((self.n as f64 / self.delta).ln().ceil() as usize).max(1))
    }
}

/// Default number of queries per sketch.
///
/// `ceil(8 k ln k ln(n/delta)) + k` for p in {1, 2} and
/// `ceil(8 k^{p/2} ln^3 k ln(n/delta)) + k` otherwise.
pub fn sample_complexity(cfg: &ProtocolConfig) -> usize {
    if let Some(s) = cfg.s_override {
        return s;
    }
    let k = cfg.k as f64;
    let lnk = k.ln();
    let tail = (cfg.n as f64 / cfg.delta).ln();
    let p = cfg.p.as_f64();
    let core = if p <= 2.0 {
        8.0 * k * lnk * tail
    } else {
        8.0 * k.powf(p / 2.0) * lnk.powi(3) * tail
    };
    core.ceil().max(0.0) as usize + cfg.k
}

/// Constant `c_p` of the recovery guarantee.
pub fn recovery_constant(p: NormIndex) -> f64 {
    match p {
        NormIndex::Finite(1) => 2.5,
        NormIndex::Finite(2) => 7.5,
        NormIndex::Finite(q) => 18.0 * 200f64.powf(1.0 / q as f64) + 3.0,
        NormIndex::Inf => f64::INFINITY,
    }
}

/// `c_p (eps_mdl + eps_nq) / sigma`.
pub fn zeta_from_sigma(sigma: f64, p: NormIndex, eps_mdl: f64, eps_nq: f64) -> Result<f64> {
    if !(sigma > 1e-12) {
        return Err(Error::SingularDesign);
    }
    Ok(recovery_constant(p) * (eps_mdl + eps_nq) / sigma)
}

pub fn recovery_error_bound(a: &Mat, p: NormIndex, eps_mdl: f64, eps_nq: f64) -> Result<f64> {
    let sigma = sigma_min_p(a, p)?.value;
    zeta_from_sigma(sigma, p, eps_mdl, eps_nq)
}

/// Entry access to a bidder's type with declared error budgets.
pub trait TypeOracle: EntryOracle {
    fn eps_mdl(&self) -> f64;
    fn eps_nq(&self) -> f64;
    /// Ground-truth latent vector, when the harness knows it.
    fn truth(&self) -> Option<&[f64]> {
        None
    }
}

/// A type `t = Az + e_mdl` observed through fixed noise `e_nq`, stored in full.
#[derive(Clone, Debug)]
pub struct MaterializedOracle {
    observed: Vec<f64>,
    eps_mdl: f64,
    eps_nq: f64,
    z: Option<Vec<f64>>,
}

impl MaterializedOracle {
    pub fn new(observed: Vec<f64>, eps_mdl: f64, eps_nq: f64, z: Option<Vec<f64>>) -> Self {
        MaterializedOracle {
            observed,
            eps_mdl,
            eps_nq,
            z,
        }
    }

    /// Builds `Az + e_mdl + e_nq` with noise of exactly the given lp norms.
    pub fn synthesize<R: Rng + ?Sized>(
        a: &Mat,
        z: &[f64],
        p: NormIndex,
        eps_mdl: f64,
        eps_nq: f64,
        rng: &mut R,
    ) -> Self {
        let d = a.rows();
        let mdl = random_with_norm(d, p, eps_mdl, rng);
        let nq = random_with_norm(d, p, eps_nq, rng);
        let observed = a
            .mul_vec(z)
            .iter()
            .zip(mdl.iter().zip(&nq))
            .map(|(t, (e1, e2))| t + e1 + e2)
            .collect();
        MaterializedOracle::new(observed, eps_mdl, eps_nq, Some(z.to_vec()))
    }
}

impl EntryOracle for MaterializedOracle {
    fn dim(&self) -> usize {
        self.observed.len()
    }
    fn entry(&self, j: usize) -> f64 {
        self.observed[j]
    }
}

impl TypeOracle for MaterializedOracle {
    fn eps_mdl(&self) -> f64 {
        self.eps_mdl
    }
    fn eps_nq(&self) -> f64 {
        self.eps_nq
    }
    fn truth(&self) -> Option<&[f64]> {
        self.z.as_deref()
    }
}

/// Wraps an oracle and records every access.
pub struct CountingOracle<'a, O: ?Sized> {
    inner: &'a O,
    calls: AtomicUsize,
    seen: Mutex<HashSet<usize>>,
}

impl<'a, O: TypeOracle + ?Sized> CountingOracle<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        CountingOracle {
            inner,
            calls: AtomicUsize::new(0),
            seen: Mutex::new(HashSet::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn distinct(&self) -> usize {
        self.seen.lock().unwrap().len()
    }
}

impl<O: TypeOracle + ?Sized> EntryOracle for CountingOracle<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn entry(&self, j: usize) -> f64 {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().insert(j);
        self.inner.entry(j)
    }
}

impl<O: TypeOracle + ?Sized> TypeOracle for CountingOracle<'_, O> {
    fn eps_mdl(&self) -> f64 {
        self.inner.eps_mdl()
    }
    fn eps_nq(&self) -> f64 {
        self.inner.eps_nq()
    }
    fn truth(&self) -> Option<&[f64]> {
        self.inner.truth()
    }
}

/// Uniformly random direction (Gaussian, then normalized) scaled to lp norm `r`.
pub fn random_with_norm<R: Rng + ?Sized>(d: usize, p: NormIndex, r: f64, rng: &mut R) -> Vec<f64> {
    if r == 0.0 {
        return vec![0.0; d];
    }
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = lp_norm(&v, p);
    v.iter().map(|x| x * r / n).collect()
}

/// Absolute slack when comparing an error with its bound.
pub const BOUND_ATOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub z_hat: Vec<f64>,
    pub queries_used: usize,
    pub zeta_bound: Option<f64>,
    /// `None` when the oracle has no ground truth.
    pub within_bound: Option<bool>,
    pub error: Option<f64>,
    /// Whether the Lewis iteration met its tolerance (the sample count is
    /// doubled when it did not).
    pub scores_converged: bool,
}

/// Per-matrix state of the protocol: sampling probabilities and the
/// minimum singular value used by the bound.
#[derive(Clone, Debug)]
pub struct Recoverer {
    pub a: Mat,
    pub p: NormIndex,
    pub scores: ScoreVector,
    pub scores_converged: bool,
    pub q: Vec<f64>,
    pub sigma: Option<f64>,
}

impl Recoverer {
    pub fn new(a: &Mat, p: NormIndex) -> Result<Self> {
        let (scores, scores_converged) = importance_scores(a, p)?;
        let q = scores.probabilities();
        Ok(Recoverer {
            a: a.clone(),
            p,
            scores,
            scores_converged,
            q,
            sigma: None,
        })
    }

    /// Attaches `sigma_min_p(A)` so results carry the error bound.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn compute_sigma(self) -> Result<Self> {
        let s = sigma_min_p(&self.a, self.p)?.value;
        Ok(self.with_sigma(s))
    }

    /// Per-sketch sample count, doubled if the scores are approximate.
    pub fn sketch_size(&self, cfg: &ProtocolConfig) -> usize {
        let s = sample_complexity(cfg);
        if self.scores_converged {
            s
        } else {
            2 * s
        }
    }

    pub fn recover<O: TypeOracle + ?Sized, R: Rng + ?Sized>(
        &self,
        oracle: &O,
        cfg: &ProtocolConfig,
        rng: &mut R,
    ) -> Result<RecoveryResult> {
        cfg.validate()?;
        if cfg.p != self.p || cfg.k != self.a.cols() {
            return Err(Error::InvalidInput("config does not match the design matrix".into()));
        }
        if oracle.dim() != self.a.rows() {
            return Err(Error::ShapeMismatch {
                expected: self.a.rows(),
                found: oracle.dim(),
            });
        }
        let s = self.sketch_size(cfg);
        let out = boosted_solve(self.a.inner(), oracle, &self.q, self.p, s, cfg.reps(), rng)?;
        let zeta_bound = match self.sigma {
            Some(sig) => Some(zeta_from_sigma(sig, self.p, oracle.eps_mdl(), oracle.eps_nq())?),
            None => None,
        };
        let z_hat = out.solution.z;
        let error = oracle.truth().map(|z| lp_dist(z, &z_hat, self.p));
        let within_bound = match (error, zeta_bound) {
            (Some(e), Some(b)) => Some(e <= b + BOUND_ATOL),
            _ => None,
        };
        Ok(RecoveryResult {
            z_hat,
            queries_used: out.queries,
            zeta_bound,
            within_bound,
            error,
            scores_converged: self.scores_converged,
        })
    }
}

/// One-shot recovery: computes scores and `sigma_min_p`, then runs the protocol.
pub fn recover_latent<O: TypeOracle + ?Sized, R: Rng + ?Sized>(
    a: &Mat,
    oracle: &O,
    cfg: &ProtocolConfig,
    rng: &mut R,
) -> Result<RecoveryResult> {
    Recoverer::new(a, cfg.p)?.compute_sigma()?.recover(oracle, cfg, rng)
}

/// RNG seed of bidder `i` under master seed `master`.
pub fn bidder_seed(master: u64, i: usize) -> u64 {
    master ^ i as u64
}

/// Max-norm error bound of the sampled least-squares estimate:
/// `sqrt(s) (eps_nq + eps_mdl) / sigma_min(DSA) * max rescale`.
pub fn linf_diagnostic(a: &Mat, plan: &SamplePlan, eps_mdl: f64, eps_nq: f64) -> Result<LinfDiagnostic> {
    if plan.p != NormIndex::Finite(2) {
        return Err(Error::InvalidInput("the diagnostic uses a p=2 plan".into()));
    }
    let dsa = plan.apply_mat(a.inner())?;
    let k = a.cols();
    if dsa.nrows() < k {
        return Err(Error::RankDeficient {
            rank: dsa.nrows(),
            cols: k,
        });
    }
    let sv = dsa.svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > RANK_TOL * smax) {
        let rank = sv.iter().filter(|&&v| v > RANK_TOL * smax).count();
        return Err(Error::RankDeficient { rank, cols: k });
    }
    let d_inf = plan.max_rescale();
    let bound = (plan.s as f64).sqrt() * (eps_nq + eps_mdl) / smin * d_inf;
    Ok(LinfDiagnostic {
        bound,
        sigma_min_sketch: smin,
        d_inf,
        s: plan.s,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinfDiagnostic {
    pub bound: f64,
    pub sigma_min_sketch: f64,
    pub d_inf: f64,
    pub s: usize,
}
