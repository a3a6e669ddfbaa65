//! Row importance scores: leverage scores and Lewis weights.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{orthonormal_basis, Mat};
use crate::norm::NormIndex;

pub const LEWIS_TOL: f64 = 1e-6;
pub const LEWIS_MAX_ITER: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub p: NormIndex,
    pub scores: Vec<f64>,
    /// Max-norm fixed-point residual; zero for leverage scores.
    pub residual: f64,
    pub iterations: usize,
}

impl ScoreVector {
    pub fn sum(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// Sampling probabilities proportional to the scores. Zero scores are
    /// floored at a tiny fraction of the largest one so every row stays
    /// reachable.
    pub fn probabilities(&self) -> Vec<f64> {
        let max = self.scores.iter().copied().fold(0.0, f64::max);
        let floor = 1e-12 * max;
        let raw: Vec<f64> = self.scores.iter().map(|&s| s.max(floor)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|s| s / total).collect()
    }
}

/// Squared row norms of an orthonormal basis of the column span.
pub fn leverage_scores(a: &Mat) -> Result<ScoreVector> {
    let u = orthonormal_basis(a)?;
    let scores = u
        .inner()
        .row_iter()
        .map(|r| r.norm_squared())
        .collect();
    Ok(ScoreVector {
        p: NormIndex::Finite(2),
        scores,
        residual: 0.0,
        iterations: 0,
    })
}

/// `(a_i' (A' W^{1-2/p} A)^{-1} a_i)^{p/2}` for every row.
pub fn lewis_map(a: &DMatrix<f64>, w: &[f64], p: u32) -> Result<Vec<f64>> {
    let (d, k) = a.shape();
    let expo = 1.0 - 2.0 / p as f64;
    let mut m = DMatrix::<f64>::zeros(k, k);
    for (i, &wi) in w.iter().enumerate().take(d) {
        if wi <= 0.0 {
            continue;
        }
        let c = wi.powf(expo);
        let row = a.row(i);
        m.ger(c, &row.transpose(), &row.transpose(), 1.0);
    }
    let chol = m
        .cholesky()
        .ok_or(Error::RankDeficient { rank: 0, cols: k })?;
    let c = chol
        .l()
        .solve_lower_triangular(&a.transpose())
        .ok_or(Error::RankDeficient { rank: 0, cols: k })?;
    Ok(c.column_iter()
        .map(|col| col.norm_squared().powf(p as f64 / 2.0))
        .collect())
}

fn max_gap(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Recomputes the fixed-point residual of given weights.
pub fn lewis_residual(a: &Mat, w: &[f64], p: u32) -> Result<f64> {
    Ok(max_gap(w, &lewis_map(a.inner(), w, p)?))
}

/// Lewis weights by fixed-point iteration started from leverage scores.
///
/// For p >= 4 the plain map is not a contraction, so each step moves
/// geometrically a `1/(p-1)` fraction of the way and weights are clipped to
/// `[1e-12, 1]`. When the iteration budget runs out the error carries the
/// last iterate.
pub fn lewis_weights(a: &Mat, p: NormIndex, tol: f64, max_iter: usize) -> Result<ScoreVector> {
    let pi = p
        .as_u32()
        .ok_or_else(|| Error::InvalidInput("Lewis weights need a finite p".into()))?;
    let lev = leverage_scores(a)?;
    if pi == 2 {
        return Ok(lev);
    }
    let damp = if pi >= 4 { Some(1.0 / (pi as f64 - 1.0)) } else { None };
    let mut w = lev.scores;
    let mut iterations = 0;
    loop {
        let t = lewis_map(a.inner(), &w, pi)?;
        let residual = max_gap(&w, &t);
        if residual <= tol || iterations >= max_iter {
            let sv = ScoreVector {
                p,
                scores: w,
                residual,
                iterations,
            };
            if residual <= tol {
                return Ok(sv);
            }
            return Err(Error::NoConvergence {
                residual,
                approx: Some(Box::new(sv)),
            });
        }
        w = match damp {
            None => t,
            Some(theta) => w
                .iter()
                .zip(&t)
                .map(|(&old, &new)| {
                    if old <= 0.0 || new <= 0.0 {
                        new.clamp(0.0, 1.0)
                    } else {
                        (old.powf(1.0 - theta) * new.powf(theta)).clamp(1e-12, 1.0)
                    }
                })
                .collect(),
        };
        iterations += 1;
    }
}

/// Leverage scores for p=2, Lewis weights otherwise. A non-converged Lewis
/// run still yields usable weights; the flag reports whether that happened.
pub fn importance_scores(a: &Mat, p: NormIndex) -> Result<(ScoreVector, bool)> {
    match lewis_weights(a, p, LEWIS_TOL, LEWIS_MAX_ITER) {
        Ok(s) => Ok((s, true)),
        Err(Error::NoConvergence {
            approx: Some(sv), ..
        }) => Ok((*sv, false)),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(d: usize, k: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..d * k).map(|_| StandardNormal.sample(&mut rng)).collect();
        Mat::from_row_slice(d, k, &data).unwrap()
    }

    #[test]
    fn leverage_of_embedded_identity() {
        let mut m = DMatrix::zeros(6, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        let s = leverage_scores(&Mat::new(m).unwrap()).unwrap();
        let expect = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in s.scores.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_row_splits_leverage() {
        // rows 0 and 1 equal r = (1,0); the rest orthogonal to r
        let a = Mat::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 2.0, 0.0, -1.0])
            .unwrap();
        let s = leverage_scores(&a).unwrap();
        // independent route: diag of A (A'A)^{-1} A'
        let m = a.inner();
        let h = m * (m.transpose() * m).try_inverse().unwrap() * m.transpose();
        for i in 0..5 {
            assert!((s.scores[i] - h[(i, i)]).abs() < 1e-12);
        }
        assert!((s.scores[0] - 0.5).abs() < 1e-12);
        assert!((s.scores[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn leverage_sums_to_rank() {
        let s = leverage_scores(&gaussian(40, 5, 1)).unwrap();
        assert!((s.sum() - 5.0).abs() < 1e-8);
        assert!(s.scores.iter().all(|&v| (0.0..=1.0 + 1e-9).contains(&v)));
    }

    #[test]
    fn lewis_at_two_is_leverage() {
        let a = gaussian(30, 3, 2);
        let l = leverage_scores(&a).unwrap();
        let w = lewis_weights(&a, NormIndex::Finite(2), 1e-6, 500).unwrap();
        assert_eq!(l.scores, w.scores);
    }

    #[test]
    fn lewis_of_identity_is_ones() {
        for p in [1, 3, 4, 6] {
            let w = lewis_weights(&Mat::identity(4), NormIndex::Finite(p), 1e-10, 500).unwrap();
            assert!(w.scores.iter().all(|&v| (v - 1.0).abs() < 1e-9), "p={p}");
        }
    }

    #[test]
    fn lewis_p1_converges_fast() {
        let a = gaussian(30, 3, 3);
        let w = lewis_weights(&a, NormIndex::Finite(1), 1e-6, 200).unwrap();
        assert!(w.residual < 1e-6);
        assert!(w.iterations <= 200);
        let again = lewis_residual(&a, &w.scores, 1).unwrap();
        assert!((again - w.residual).abs() < 1e-9);
        // the sum is exact at the fixed point and drifts by at most d * residual
        assert!((w.sum() - 3.0).abs() <= 30.0 * w.residual, "sum {}", w.sum());
    }

    #[test]
    fn lewis_damped_for_large_p() {
        let a = gaussian(60, 4, 4);
        for p in [4, 5, 8] {
            let w = lewis_weights(&a, NormIndex::Finite(p), 1e-8, 2000).unwrap();
            assert!(w.residual <= 1e-8);
            assert!((w.sum() - 4.0).abs() < 1e-6, "p={p} sum {}", w.sum());
        }
    }

    #[test]
    fn no_convergence_carries_iterate() {
        let a = gaussian(60, 4, 9);
        match lewis_weights(&a, NormIndex::Finite(3), 1e-14, 1) {
            Err(Error::NoConvergence { residual, approx }) => {
                assert!(residual > 1e-14);
                assert_eq!(approx.unwrap().scores.len(), 60);
            }
            other => panic!("unexpected {other:?}"),
        }
        let (sv, converged) = importance_scores(&a, NormIndex::Finite(3)).unwrap();
        assert!(converged);
        assert_eq!(sv.scores.len(), 60);
    }

    #[test]
    fn probabilities_are_positive() {
        let mut m = DMatrix::zeros(4, 1);
        m[(0, 0)] = 1.0;
        let s = leverage_scores(&Mat::new(m).unwrap()).unwrap();
        let q = s.probabilities();
        assert!(q.iter().all(|&v| v > 0.0));
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
