//! The three stages that make a mechanism robust to prior misspecification.
//!
//! * `M1` (round up): a bid on the rounded grid is replaced by a draw from the
//!   prior conditioned on the grid cell of the bid; the base mechanism runs
//!   on the draws and payments drop by `k ||A|| L delta`.
//! * `M2` (distance gate): each report is mapped to the rounded nearest
//!   support point of the prior; bidders farther than `zeta + delta k^{1/p}`
//!   are excluded, the rest get `M1`'s outcome at a discount.
//! * `M_ell` (round down): bids are snapped to the grid before `M2` runs.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{round_point, PriorOracle, RoundingParams};
use crate::error::{Error, Result};
use crate::norm::{lp_dist, NormIndex};

use super::bounds::{eta_mu_bounds, revenue_deficit_bound, rho_upper_bound, BoundParams};
use super::{Branch, Bundle, Lottery, Mechanism, Outcome};

type Law = Vec<(Vec<f64>, f64)>;

fn clamp_discount(p: f64, discount: f64) -> f64 {
    (p - discount).max(0.0)
}

pub struct RoundUp {
    inner: Arc<dyn Mechanism>,
    priors: Vec<Arc<dyn PriorOracle>>,
    rp: RoundingParams,
    discount: f64,
}

impl RoundUp {
    /// Cube widths for a grid bid: `delta` on non-zero coordinates and the
    /// clamp cell `[0, l_j)` on zero coordinates (a full cell when `l_j = 0`).
    pub fn widths(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.rp.ell)
            .map(|(&wj, &lj)| {
                if wj != 0.0 || lj == 0.0 {
                    self.rp.delta
                } else {
                    lj
                }
            })
            .collect()
    }

    fn laws(&self, bids: &[Vec<f64>]) -> Result<Vec<Law>> {
        bids.iter()
            .zip(&self.priors)
            .map(|(w, prior)| prior.cell_conditional(&self.rp, &self.rp.cells(w)))
            .collect()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }
}

impl Mechanism for RoundUp {
    fn bidders(&self) -> usize {
        self.priors.len()
    }

    fn lottery(&self, bids: &[Vec<f64>]) -> Result<Lottery> {
        let laws = self.laws(bids)?;
        let n = bids.len();
        let mut branches = Vec::new();
        let mut idx = vec![0usize; n];
        loop {
            let draw: Vec<Vec<f64>> = (0..n).map(|i| laws[i][idx[i]].0.clone()).collect();
            let weight: f64 = (0..n).map(|i| laws[i][idx[i]].1).product();
            for b in self.inner.lottery(&draw)?.branches {
                branches.push(Branch {
                    prob: weight * b.prob,
                    payments: b.payments.iter().map(|&p| clamp_discount(p, self.discount)).collect(),
                    bundles: b.bundles,
                });
            }
            // odometer over the product of conditional supports
            let mut i = n;
            loop {
                if i == 0 {
                    return Ok(Lottery { branches });
                }
                i -= 1;
                idx[i] += 1;
                if idx[i] < laws[i].len() {
                    break;
                }
                idx[i] = 0;
            }
        }
    }

    fn realize(&self, bids: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<Outcome> {
        let laws = self.laws(bids)?;
        let draw: Vec<Vec<f64>> = laws
            .iter()
            .map(|law| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (x, p) in law {
                    acc += p;
                    if u < acc {
                        return x.clone();
                    }
                }
                law.last().unwrap().0.clone()
            })
            .collect();
        let mut out = self.inner.realize(&draw, rng)?;
        for p in out.payments.iter_mut() {
            *p = clamp_discount(*p, self.discount);
        }
        Ok(out)
    }

    fn stages(&self) -> Vec<String> {
        let mut s = vec!["round_up".to_string()];
        s.extend(self.inner.stages());
        s
    }
}

pub struct DistanceGate {
    inner: Arc<dyn Mechanism>,
    priors: Vec<Arc<dyn PriorOracle>>,
    rp: RoundingParams,
    p: NormIndex,
    threshold: f64,
    discount: f64,
}

impl DistanceGate {
    /// Mapped report and eligibility for one bidder.
    pub fn map_report(&self, i: usize, w: &[f64]) -> (Vec<f64>, bool) {
        let c = self.priors[i].closest_point(w, self.p);
        let mapped = round_point(&c, &self.rp);
        let ok = lp_dist(w, &mapped, self.p) <= self.threshold;
        (mapped, ok)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    fn mapped(&self, bids: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<bool>) {
        bids.iter().enumerate().map(|(i, w)| self.map_report(i, w)).unzip()
    }

    fn gate(&self, bundles: &mut [Bundle], payments: &mut [f64], ok: &[bool]) {
        for i in 0..ok.len() {
            if ok[i] {
                payments[i] = clamp_discount(payments[i], self.discount);
            } else {
                bundles[i] = 0;
                payments[i] = 0.0;
            }
        }
    }
}

impl Mechanism for DistanceGate {
    fn bidders(&self) -> usize {
        self.priors.len()
    }

    fn lottery(&self, bids: &[Vec<f64>]) -> Result<Lottery> {
        let (mapped, ok) = self.mapped(bids);
        let mut l = self.inner.lottery(&mapped)?;
        for b in l.branches.iter_mut() {
            self.gate(&mut b.bundles, &mut b.payments, &ok);
        }
        Ok(l)
    }

    fn realize(&self, bids: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<Outcome> {
        let (mapped, ok) = self.mapped(bids);
        let mut out = self.inner.realize(&mapped, rng)?;
        self.gate(&mut out.bundles, &mut out.payments, &ok);
        Ok(out)
    }

    fn stages(&self) -> Vec<String> {
        let mut s = vec!["distance_gate".to_string()];
        s.extend(self.inner.stages());
        s
    }
}

pub struct RoundDown {
    inner: Arc<dyn Mechanism>,
    rp: RoundingParams,
    discount: f64,
}

impl RoundDown {
    fn rounded(&self, bids: &[Vec<f64>]) -> Vec<Vec<f64>> {
        bids.iter().map(|w| round_point(w, &self.rp)).collect()
    }
}

impl Mechanism for RoundDown {
    fn bidders(&self) -> usize {
        self.inner.bidders()
    }

    fn lottery(&self, bids: &[Vec<f64>]) -> Result<Lottery> {
        let mut l = self.inner.lottery(&self.rounded(bids))?;
        for b in l.branches.iter_mut() {
            for p in b.payments.iter_mut() {
                *p = clamp_discount(*p, self.discount);
            }
        }
        Ok(l)
    }

    fn realize(&self, bids: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<Outcome> {
        let mut out = self.inner.realize(&self.rounded(bids), rng)?;
        for p in out.payments.iter_mut() {
            *p = clamp_discount(*p, self.discount);
        }
        Ok(out)
    }

    fn stages(&self) -> Vec<String> {
        let mut s = vec!["round_down".to_string()];
        s.extend(self.inner.stages());
        s
    }
}

/// Round-up stage around `mhat`. `a_norm` is `||A||_inf` and `lipschitz` the
/// constant `L` of the type-space valuation.
pub fn build_m1(
    mhat: Arc<dyn Mechanism>,
    priors: Vec<Arc<dyn PriorOracle>>,
    rp: RoundingParams,
    lipschitz: f64,
    a_norm: f64,
    k: usize,
) -> RoundUp {
    let discount = k as f64 * a_norm * lipschitz * rp.delta;
    RoundUp {
        inner: mhat,
        priors,
        rp,
        discount,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn build_m2(
    m1: Arc<dyn Mechanism>,
    priors: Vec<Arc<dyn PriorOracle>>,
    zeta: f64,
    rp: RoundingParams,
    p: NormIndex,
    lipschitz: f64,
    a_norm: f64,
    k: usize,
) -> DistanceGate {
    let threshold = zeta + rp.delta * p.root(k as f64);
    let discount = k as f64 * threshold * a_norm * lipschitz;
    DistanceGate {
        inner: m1,
        priors,
        rp,
        p,
        threshold,
        discount,
    }
}

pub fn build_m_ell(m2: Arc<dyn Mechanism>, rp: RoundingParams, lipschitz: f64, a_norm: f64, k: usize) -> RoundDown {
    let discount = k as f64 * a_norm * lipschitz * rp.delta;
    RoundDown { inner: m2, rp, discount }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustParams {
    pub ell: Vec<f64>,
    pub delta: f64,
    pub zeta: f64,
    pub p: NormIndex,
    pub lipschitz: f64,
    pub a_norm: f64,
    pub k: usize,
    pub n: usize,
}

impl RobustParams {
    pub fn rounding(&self) -> RoundingParams {
        RoundingParams {
            ell: self.ell.clone(),
            delta: self.delta,
        }
    }

    pub fn bound_params(&self, rho: f64) -> BoundParams {
        BoundParams {
            zeta: self.zeta,
            delta: self.delta,
            k: self.k,
            p: self.p,
            n: self.n,
            lipschitz: self.lipschitz,
            a_norm: self.a_norm,
            rho,
        }
    }

    /// Predicted `(eta, mu)`; `rho` defaults to its worst-case bound.
    pub fn predicted(&self, rho: Option<f64>) -> (f64, f64) {
        let rho = rho.unwrap_or_else(|| rho_upper_bound(self.n, self.k, self.p, self.delta, self.zeta));
        eta_mu_bounds(&self.bound_params(rho))
    }

    pub fn revenue_deficit(&self, rho: Option<f64>) -> f64 {
        let rho = rho.unwrap_or_else(|| rho_upper_bound(self.n, self.k, self.p, self.delta, self.zeta));
        revenue_deficit_bound(&self.bound_params(rho))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub bundles: Vec<Bundle>,
    pub payments: Vec<f64>,
    pub excluded: Vec<bool>,
}

/// The composed mechanism together with its sampled offsets and RNG seed.
pub struct RobustMechanism {
    pub params: RobustParams,
    pub seed: u64,
    m1: Arc<RoundUp>,
    m2: Arc<DistanceGate>,
    chain: Arc<RoundDown>,
}

impl RobustMechanism {
    pub fn m1(&self) -> Arc<dyn Mechanism> {
        self.m1.clone()
    }

    pub fn m2(&self) -> Arc<dyn Mechanism> {
        self.m2.clone()
    }

    pub fn composed(&self) -> Arc<dyn Mechanism> {
        self.chain.clone()
    }

    /// Runs the composed mechanism once on latent reports. Every call uses
    /// the same seeded stream, so repeated calls agree.
    pub fn run_auction(&self, reports: &[Vec<f64>]) -> Result<AuctionOutcome> {
        if reports.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("reports must be finite".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let out = self.chain.realize(reports, &mut rng)?;
        let rp = self.params.rounding();
        let excluded = reports
            .iter()
            .enumerate()
            .map(|(i, w)| !self.m2.map_report(i, &round_point(w, &rp)).1)
            .collect();
        Ok(AuctionOutcome {
            bundles: out.bundles,
            payments: out.payments,
            excluded,
        })
    }
}

impl Mechanism for RobustMechanism {
    fn bidders(&self) -> usize {
        self.chain.bidders()
    }
    fn lottery(&self, bids: &[Vec<f64>]) -> Result<Lottery> {
        self.chain.lottery(bids)
    }
    fn realize(&self, bids: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<Outcome> {
        self.chain.realize(bids, rng)
    }
    fn stages(&self) -> Vec<String> {
        self.chain.stages()
    }
}

/// Options of `build_robust` beyond the model parameters.
#[derive(Clone, Debug, Default)]
pub struct RobustOptions {
    /// Grid width; `sqrt(zeta)` when absent.
    pub delta: Option<f64>,
    /// Fixed offsets instead of a uniform draw.
    pub ell: Option<Vec<f64>>,
}

/// Smallest grid width used when `zeta = 0`.
pub const MIN_DELTA: f64 = 1e-9;

/// Samples `l ~ U[0, delta]^k` with `delta = sqrt(zeta)` and composes the
/// three stages around `mhat`. Requires `zeta >= eps_mdl`.
#[allow(clippy::too_many_arguments)]
pub fn build_robust<R: Rng + ?Sized>(
    mhat: Arc<dyn Mechanism>,
    priors: Vec<Arc<dyn PriorOracle>>,
    zeta: f64,
    eps_mdl: f64,
    p: NormIndex,
    lipschitz: f64,
    a_norm: f64,
    k: usize,
    opts: &RobustOptions,
    rng: &mut R,
) -> Result<RobustMechanism> {
    if !(zeta >= eps_mdl) {
        return Err(Error::PreconditionFailed(format!(
            "zeta = {zeta} is below the model error {eps_mdl}"
        )));
    }
    let n = priors.len();
    if mhat.bidders() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            found: mhat.bidders(),
        });
    }
    let delta = opts.delta.unwrap_or_else(|| zeta.sqrt().max(MIN_DELTA));
    let rp = match &opts.ell {
        Some(ell) => RoundingParams::new(ell.clone(), delta)?,
        None => RoundingParams::random(k, delta, rng)?,
    };
    let seed = rng.next_u64();
    let m1 = Arc::new(build_m1(mhat, priors.clone(), rp.clone(), lipschitz, a_norm, k));
    let m2 = Arc::new(build_m2(m1.clone(), priors, zeta, rp.clone(), p, lipschitz, a_norm, k));
    let chain = Arc::new(build_m_ell(m2.clone(), rp.clone(), lipschitz, a_norm, k));
    Ok(RobustMechanism {
        params: RobustParams {
            ell: rp.ell,
            delta,
            zeta,
            p,
            lipschitz,
            a_norm,
            k,
            n,
        },
        seed,
        m1,
        m2,
        chain,
    })
}
