//! Dense design matrices and the induced minimum singular value.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lad::lad_vertex;
use crate::lp;
use crate::norm::{lp_norm, NormIndex};

/// Relative threshold below which singular values count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Largest `k` for which the orthant enumeration of the p=1 case is attempted.
pub const MAX_ORTHANT_COLS: usize = 20;

/// A `d x k` real matrix with finite entries and `d >= k >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat(DMatrix<f64>);

impl Mat {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let (d, k) = m.shape();
        if k == 0 || d < k {
            return Err(Error::InvalidInput(format!(
                "matrix must satisfy d >= k >= 1, got {d}x{k}"
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Mat(m))
    }

    pub fn from_row_slice(d: usize, k: usize, data: &[f64]) -> Result<Self> {
        if data.len() != d * k {
            return Err(Error::ShapeMismatch {
                expected: d * k,
                found: data.len(),
            });
        }
        Mat::new(DMatrix::from_row_slice(d, k, data))
    }

    pub fn identity(k: usize) -> Self {
        Mat(DMatrix::identity(k, k))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn inner(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (d, k) = self.0.shape();
        let mut out = Vec::with_capacity(d * k);
        for i in 0..d {
            for j in 0..k {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    pub fn scaled(&self, c: f64) -> Mat {
        Mat(&self.0 * c)
    }

    /// Induced infinity norm: the largest absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        self.0
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.0.clone().svd(false, false).singular_values.as_slice().to_vec();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    }

    pub fn numerical_rank(&self) -> usize {
        let s = self.singular_values();
        let cut = RANK_TOL * s.first().copied().unwrap_or(0.0);
        s.iter().filter(|&&v| v > cut).count()
    }
}

/// Thin orthonormal basis `U` for the column span of `A`, with the sign of
/// each column chosen so that `U'A` has a positive diagonal.
pub fn orthonormal_basis(a: &Mat) -> Result<Mat> {
    let k = a.cols();
    let qr = a.0.clone().qr();
    let r = qr.r();
    let sv = r.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&v| v > RANK_TOL * smax).count();
    if smax == 0.0 || rank < k {
        return Err(Error::RankDeficient { rank, cols: k });
    }
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(Mat(q))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethod {
    Svd,
    OrthantLp,
    SphereSearch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaMinP {
    pub p: NormIndex,
    pub value: f64,
    pub method: SigmaMethod,
    pub certified: bool,
}

/// `min ||Ax||_p` over `||x||_p = 1`.
///
/// Exact for p=1 (one LP per sign orthant) and p=2 (SVD). For other p the
/// value comes from a multi-start local search and is only an upper estimate.
pub fn sigma_min_p(a: &Mat, p: NormIndex) -> Result<SigmaMinP> {
    if a.0.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("zero matrix".into()));
    }
    match p {
        NormIndex::Finite(2) => {
            let s = a.singular_values();
            Ok(SigmaMinP {
                p,
                value: *s.last().unwrap(),
                method: SigmaMethod::Svd,
                certified: true,
            })
        }
        NormIndex::Finite(1) => Ok(SigmaMinP {
            p,
            value: sigma_min_1(a)?,
            method: SigmaMethod::OrthantLp,
            certified: true,
        }),
        _ => Ok(SigmaMinP {
            p,
            value: sphere_search(a, p, &SearchOptions::default()),
            method: SigmaMethod::SphereSearch,
            certified: false,
        }),
    }
}

/// `min ||Az||_1` over `s.z = 1`. Minimizing this over sign patterns `s`
/// gives `sigma_min_1`: any feasible `z` has `||z||_1 >= 1`, and the
/// optimal unit vector is feasible for its own sign pattern. Eliminating
/// `z_0 = 1 - sum_j s_j z_j` leaves an unconstrained LAD problem.
fn sign_pattern_min(a: &DMatrix<f64>, signs: &[f64]) -> Result<f64> {
    let (d, k) = a.shape();
    let a0 = a.column(0);
    if k == 1 {
        return Ok(a0.abs().sum());
    }
    let reduced = DMatrix::from_fn(d, k - 1, |i, j| a[(i, j + 1)] - signs[j + 1] * a0[i]);
    let rhs: Vec<f64> = a0.iter().map(|v| -v).collect();
    match lad_vertex(&reduced, &rhs) {
        Some((_, loss)) => Ok(loss),
        None => lp::orthant_min_l1(a, signs),
    }
}

fn sigma_min_1(a: &Mat) -> Result<f64> {
    let k = a.cols();
    if k > MAX_ORTHANT_COLS {
        return Err(Error::Infeasible(format!(
            "orthant enumeration needs 2^{} programs (k = {k} > {MAX_ORTHANT_COLS})",
            k - 1
        )));
    }
    let mut best = f64::INFINITY;
    // x and -x give the same value, so fix the first sign
    for mask in 0..(1usize << (k - 1)) {
        let signs: Vec<f64> = (0..k)
            .map(|j| if j > 0 && mask >> (j - 1) & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        best = best.min(sign_pattern_min(&a.0, &signs)?);
    }
    Ok(best.max(0.0))
}

/// Knobs of the local search used for uncertified norms.
#[derive(Clone, Debug)]
pub struct SearchOptions {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            restarts: 20,
            tol: 1e-8,
            max_iter: 2000,
            seed: 0x5eed,
        }
    }
}

fn ratio(a: &DMatrix<f64>, x: &DVector<f64>, p: NormIndex) -> f64 {
    let ax = a * x;
    lp_norm(ax.as_slice(), p) / lp_norm(x.as_slice(), p)
}

// gradient of log ||Ax||_p - log ||x||_p; for the max norm a subgradient
fn log_ratio_grad(a: &DMatrix<f64>, x: &DVector<f64>, p: NormIndex) -> DVector<f64> {
    let ax = a * x;
    let dual = |v: &DVector<f64>| -> DVector<f64> {
        match p {
            NormIndex::Inf => {
                let i = v.iamax();
                let mut g = DVector::zeros(v.len());
                g[i] = v[i].signum() / v[i].abs().max(f64::MIN_POSITIVE);
                g
            }
            NormIndex::Finite(q) => {
                let q = q as f64;
                let n = lp_norm(v.as_slice(), p).max(f64::MIN_POSITIVE);
                v.map(|t| (t / n).abs().powf(q - 1.0) * t.signum() / n)
            }
        }
    };
    a.transpose() * dual(&ax) - dual(x)
}

fn normalize(x: &mut DVector<f64>, p: NormIndex) {
    let n = lp_norm(x.as_slice(), p);
    if n > 0.0 {
        *x /= n;
    }
}

/// Multi-start projected gradient descent with Armijo backtracking on the
/// lp unit sphere. Returns the smallest ratio found.
pub fn sphere_search(a: &Mat, p: NormIndex, opts: &SearchOptions) -> f64 {
    let k = a.cols();
    let m = &a.0;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(opts.restarts + k);
    // right singular vector of the smallest singular value is a good seed
    let svd = m.clone().svd(false, true);
    if let Some(vt) = svd.v_t {
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        starts.push(vt.row(imin).transpose());
    }
    for j in 0..k {
        let mut e = DVector::zeros(k);
        e[j] = 1.0;
        starts.push(e);
    }
    while starts.len() < opts.restarts + k {
        starts.push(DVector::from_fn(k, |_, _| rng.sample(StandardNormal)));
    }
    let mut best = f64::INFINITY;
    for mut x in starts {
        normalize(&mut x, p);
        let mut f = ratio(m, &x, p);
        let mut step = 0.1;
        for _ in 0..opts.max_iter {
            let g = log_ratio_grad(m, &x, p);
            let gn2 = g.norm_squared();
            if gn2 == 0.0 || !gn2.is_finite() {
                break;
            }
            let mut accepted = None;
            let mut t = step * 2.0;
            for _ in 0..60 {
                let mut y = &x - &g * t;
                normalize(&mut y, p);
                let fy = ratio(m, &y, p);
                if fy.is_finite() && fy.ln() <= f.ln() - 1e-4 * t * gn2 {
                    accepted = Some((y, fy));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((y, fy)) => {
                    let rel = (f - fy) / f.max(f64::MIN_POSITIVE);
                    x = y;
                    f = fy;
                    step = t;
                    if rel < opts.tol {
                        break;
                    }
                }
                None => break,
            }
        }
        best = best.min(f);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution;

    fn gaussian(d: usize, k: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..d * k).map(|_| StandardNormal.sample(&mut rng)).collect();
        Mat::from_row_slice(d, k, &data).unwrap()
    }

    #[test]
    fn sign_patterns_agree_with_orthant_programs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..6 {
            let a = DMatrix::from_fn(25, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut via_lad = f64::INFINITY;
            let mut via_lp = f64::INFINITY;
            for mask in 0..8usize {
                let s: Vec<f64> = (0..4).map(|j| if j > 0 && mask >> (j - 1) & 1 == 1 { -1.0 } else { 1.0 }).collect();
                let g = sign_pattern_min(&a, &s).unwrap();
                let o = lp::orthant_min_l1(&a, &s).unwrap();
                assert!(g <= o + 1e-9);
                via_lad = via_lad.min(g);
                via_lp = via_lp.min(o);
            }
            assert!((via_lad - via_lp).abs() < 1e-9 * (1.0 + via_lp));
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Mat::new(DMatrix::zeros(2, 3)).is_err());
        assert!(Mat::from_row_slice(2, 1, &[1.0, f64::NAN]).is_err());
        assert!(Mat::from_row_slice(2, 1, &[1.0]).is_err());
    }

    #[test]
    fn basis_of_embedded_identity_is_itself() {
        let mut m = DMatrix::zeros(5, 3);
        for j in 0..3 {
            m[(j, j)] = 1.0;
        }
        let a = Mat::new(m).unwrap();
        let u = orthonormal_basis(&a).unwrap();
        assert!((u.inner() - a.inner()).abs().max() < 1e-12);
    }

    #[test]
    fn basis_removes_column_scaling() {
        let a = Mat::new(DMatrix::identity(4, 4) * 2.0).unwrap();
        let u = orthonormal_basis(&a).unwrap();
        assert!((u.inner() - DMatrix::identity(4, 4)).abs().max() < 1e-12);
    }

    #[test]
    fn basis_is_orthonormal_and_spans() {
        let a = gaussian(50, 4, 11);
        let u = orthonormal_basis(&a).unwrap();
        let g = u.inner().transpose() * u.inner();
        assert!((g - DMatrix::identity(4, 4)).abs().max() < 1e-10);
        // A = U (U'A) when spans agree
        let proj = u.inner() * (u.inner().transpose() * a.inner());
        assert!((proj - a.inner()).abs().max() < 1e-10);
    }

    #[test]
    fn rank_deficient_is_reported() {
        let a = Mat::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        match orthonormal_basis(&a) {
            Err(Error::RankDeficient { rank, cols }) => assert_eq!((rank, cols), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sigma_on_diagonal_and_identity() {
        let a = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]).unwrap();
        let s = sigma_min_p(&a, NormIndex::Finite(1)).unwrap();
        assert!((s.value - 2.0).abs() < 1e-9);
        assert!(s.certified);
        assert_eq!(s.method, SigmaMethod::OrthantLp);
        let s = sigma_min_p(&Mat::identity(4), NormIndex::Finite(2)).unwrap();
        assert!((s.value - 1.0).abs() < 1e-12);
        let s = sigma_min_p(&Mat::identity(3), NormIndex::Finite(3)).unwrap();
        assert!(!s.certified);
        assert!((s.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthant_guard() {
        let a = gaussian(25, 21, 3);
        assert!(matches!(
            sigma_min_p(&a, NormIndex::Finite(1)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn sphere_search_matches_svd_at_two() {
        let a = gaussian(30, 3, 5);
        let s2 = sigma_min_p(&a, NormIndex::Finite(2)).unwrap().value;
        let est = sphere_search(&a, NormIndex::Finite(2), &SearchOptions::default());
        assert!(est >= s2 - 1e-9);
        assert!((est - s2) / s2 < 1e-6);
    }

    #[test]
    fn inf_norm_is_max_row_sum() {
        let a = Mat::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.5]).unwrap();
        assert_eq!(a.inf_norm(), 3.0);
    }
}
