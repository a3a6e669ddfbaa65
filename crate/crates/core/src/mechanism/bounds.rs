//! Explicit bound expressions for the robustified mechanism.

use serde::{Deserialize, Serialize};

use crate::norm::NormIndex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub zeta: f64,
    pub delta: f64,
    pub k: usize,
    pub p: NormIndex,
    pub n: usize,
    pub lipschitz: f64,
    pub a_norm: f64,
    /// Total variation between rounded true and rounded model priors,
    /// summed over bidders.
    pub rho: f64,
}

/// `(eta, mu)` with
/// `eta = 2kALd + 4kLA rho + 3k(zeta + d k^{1/p})AL + 2d k^{(1+p)/p} AL + 3kLAd`
/// and `mu = zeta + d k^{1/p}`.
pub fn eta_mu_bounds(b: &BoundParams) -> (f64, f64) {
    let k = b.k as f64;
    let al = b.a_norm * b.lipschitz;
    let kp = b.p.root(k);
    let reach = b.zeta + b.delta * kp;
    let eta = 2.0 * k * al * b.delta
        + 4.0 * k * al * b.rho
        + 3.0 * k * reach * al
        + 2.0 * b.delta * k * kp * al
        + 3.0 * k * al * b.delta;
    (eta, reach)
}

/// `nkALd + nkLA rho + nk(zeta + d k^{1/p})AL + nkLAd + 2n d k^{(1+p)/p} AL`.
pub fn revenue_deficit_bound(b: &BoundParams) -> f64 {
    let n = b.n as f64;
    let k = b.k as f64;
    let al = b.a_norm * b.lipschitz;
    let kp = b.p.root(k);
    let reach = b.zeta + b.delta * kp;
    n * k * al * b.delta
        + n * k * al * b.rho
        + n * k * reach * al
        + n * k * al * b.delta
        + 2.0 * n * b.delta * k * kp * al
}

/// Worst-case `rho`: `n (1 + k^{1-1/p} / delta) zeta`.
pub fn rho_upper_bound(n: usize, k: usize, p: NormIndex, delta: f64, zeta: f64) -> f64 {
    if zeta == 0.0 {
        return 0.0;
    }
    let k = k as f64;
    n as f64 * (1.0 + k / p.root(k) / delta) * zeta
}
