//! Exact and sketched lp regression.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lad::lad_vertex;
use crate::lp;
use crate::matrix::RANK_TOL;
use crate::norm::{lp_norm, lp_pow_sum, NormIndex};
use crate::sketch::{build_sample_plan, SamplePlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSolution {
    pub z: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Read access to the entries of a (noisy) type vector.
///
/// Implementations must return the same value for repeated queries of the
/// same index and must be callable from several threads at once.
pub trait EntryOracle: Sync {
    fn dim(&self) -> usize;
    fn entry(&self, j: usize) -> f64;
}

impl EntryOracle for [f64] {
    fn dim(&self) -> usize {
        self.len()
    }
    fn entry(&self, j: usize) -> f64 {
        self[j]
    }
}

impl EntryOracle for Vec<f64> {
    fn dim(&self) -> usize {
        self.len()
    }
    fn entry(&self, j: usize) -> f64 {
        self[j]
    }
}

fn residual(a: &DMatrix<f64>, z: &[f64], b: &[f64]) -> Vec<f64> {
    let az = a * DVector::from_column_slice(z);
    az.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn loss(a: &DMatrix<f64>, z: &[f64], b: &[f64], p: NormIndex) -> f64 {
    lp_norm(&residual(a, z, b), p)
}

fn check_shape(a: &DMatrix<f64>, b: &[f64]) -> Result<()> {
    if a.nrows() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.nrows(),
            found: b.len(),
        });
    }
    Ok(())
}

fn qr_solve(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let (d, k) = a.shape();
    if d < k {
        return Err(Error::RankDeficient { rank: d, cols: k });
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let sv = r.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&v| v > RANK_TOL * smax).count();
    if smax == 0.0 || rank < k {
        return Err(Error::RankDeficient { rank, cols: k });
    }
    let qtb = qr.q().transpose() * DVector::from_column_slice(b);
    let z = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient { rank, cols: k })?;
    Ok(z.as_slice().to_vec())
}

/// Least squares through a thin QR factorization.
pub fn solve_l2(a: &DMatrix<f64>, b: &[f64]) -> Result<RegressionSolution> {
    check_shape(a, b)?;
    let z = qr_solve(a, b)?;
    let loss = loss(a, &z, b, NormIndex::Finite(2));
    Ok(RegressionSolution {
        z,
        loss,
        iterations: 1,
        converged: true,
    })
}

/// Least absolute deviations.
///
/// The basis-exchange solver runs first. If it stalls, the dual program
/// (`k` equality rows) is solved; rows whose dual
/// value is strictly inside `(-1, 1)` have zero residual at every optimum,
/// which pins `z` down when they span the column space. Otherwise the
/// primal program is solved directly.
pub fn solve_l1(a: &DMatrix<f64>, b: &[f64]) -> Result<RegressionSolution> {
    check_shape(a, b)?;
    let k = a.ncols();
    if let Some((z, l)) = lad_vertex(a, b) {
        return Ok(RegressionSolution {
            z,
            loss: l,
            iterations: 0,
            converged: true,
        });
    }
    let (opt, u) = lp::lad_dual(a, b)?;
    let slack = 1e-7 * (1.0 + opt.abs());
    let interior: Vec<usize> = (0..a.nrows()).filter(|&i| u[i].abs() < 1.0 - 1e-7).collect();
    if interior.len() >= k {
        let sub = a.select_rows(&interior);
        let rhs: Vec<f64> = interior.iter().map(|&i| b[i]).collect();
        if let Ok(z) = qr_solve(&sub, &rhs) {
            let l = loss(a, &z, b, NormIndex::Finite(1));
            if l <= opt + slack {
                return Ok(RegressionSolution {
                    z,
                    loss: l,
                    iterations: 1,
                    converged: true,
                });
            }
        }
    }
    let (z, _) = lp::lad_primal(a, b)?;
    let l = loss(a, &z, b, NormIndex::Finite(1));
    Ok(RegressionSolution {
        z,
        loss: l,
        iterations: 2,
        converged: true,
    })
}

#[derive(Clone, Debug)]
pub struct IrlsOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mu: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            tol: 1e-10,
            max_iter: 200,
            mu: 1e-10,
        }
    }
}

/// lp regression for integer p >= 3 by damped Newton steps on `sum |r_i|^p`.
///
/// The Newton direction is `1/(p-1)` of the way to the weighted least-squares
/// solution with weights `(|r_i| + mu)^{p-2}`, so each step is one reweighted
/// solve. Steps are halved until the Armijo condition holds; the run stops
/// once the predicted decrease falls below `tol` relative to the loss.
/// Returns the best iterate with `converged = false` when the budget runs out.
pub fn solve_lp(a: &DMatrix<f64>, b: &[f64], p: u32, opts: &IrlsOptions) -> Result<RegressionSolution> {
    check_shape(a, b)?;
    if p < 3 {
        return Err(Error::InvalidInput(format!("solve_lp needs p >= 3, got {p}")));
    }
    let pn = NormIndex::Finite(p);
    let pf = p as f64;
    let mut z = solve_l2(a, b)?.z;
    let mut r = residual(a, &z, b);
    let mut f = lp_pow_sum(&r, p);
    let mut iterations = 0;
    let mut converged = f == 0.0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let w: Vec<f64> = r.iter().map(|ri| (ri.abs() + opts.mu).powi(p as i32 - 2)).collect();
        let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        let wa = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| sw[i] * a[(i, j)]);
        let wb: Vec<f64> = b.iter().zip(&sw).map(|(x, y)| x * y).collect();
        let target = qr_solve(&wa, &wb)?;
        let dir: Vec<f64> = z.iter().zip(&target).map(|(x, t)| (t - x) / (pf - 1.0)).collect();
        let adir = a * DVector::from_column_slice(&dir);
        // -grad . dir
        let decrease: f64 = r
            .iter()
            .zip(adir.iter())
            .map(|(ri, ad)| -pf * ri.abs().powi(p as i32 - 1) * ri.signum() * ad)
            .sum();
        if !(decrease > opts.tol * f) {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = z.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            let rc = residual(a, &cand, b);
            let fc = lp_pow_sum(&rc, p);
            if fc <= f - 1e-4 * step * decrease {
                z = cand;
                r = rc;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || f == 0.0 {
            // no descent left at working precision
            converged = true;
        }
    }
    Ok(RegressionSolution {
        loss: lp_norm(&r, pn),
        z,
        iterations,
        converged,
    })
}

/// Dispatches to the exact solver for `p`.
pub fn solve_exact(a: &DMatrix<f64>, b: &[f64], p: NormIndex) -> Result<RegressionSolution> {
    match p {
        NormIndex::Finite(1) => solve_l1(a, b),
        NormIndex::Finite(2) => solve_l2(a, b),
        NormIndex::Finite(q) => solve_lp(a, b, q, &IrlsOptions::default()),
        NormIndex::Inf => Err(Error::InvalidInput("no solver for the max norm".into())),
    }
}

/// Sketched operands `(DSA, DSt)` with repeated rows merged. Only the
/// sampled entries of `t` are read.
pub fn sketch_operands(
    a: &DMatrix<f64>,
    t: &(impl EntryOracle + ?Sized),
    plan: &SamplePlan,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if a.nrows() != plan.d || t.dim() != plan.d {
        return Err(Error::ShapeMismatch {
            expected: plan.d,
            found: a.nrows().min(t.dim()),
        });
    }
    let rows = plan.collapsed();
    let sa = DMatrix::from_fn(rows.len(), a.ncols(), |i, j| rows[i].1 * a[(rows[i].0, j)]);
    let sb = rows.iter().map(|&(j, c)| c * t.entry(j)).collect();
    Ok((sa, sb))
}

/// Solves `min ||DSAz - DSt||_p` for the given plan.
pub fn sketched_solve(
    a: &DMatrix<f64>,
    t: &(impl EntryOracle + ?Sized),
    p: NormIndex,
    plan: &SamplePlan,
) -> Result<RegressionSolution> {
    if plan.p != p {
        return Err(Error::InvalidInput(format!(
            "plan built for p={} used with p={p}",
            plan.p
        )));
    }
    let (sa, sb) = sketch_operands(a, t, plan)?;
    solve_exact(&sa, &sb, p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedSolution {
    pub solution: RegressionSolution,
    /// Index of the selected candidate.
    pub chosen: usize,
    /// Loss of each candidate on the selection sketch (`None` if its solve failed).
    pub selection_losses: Vec<Option<f64>>,
    /// Sum of the sizes of all plans drawn, i.e. `(reps + 1) * s`.
    pub queries: usize,
}

/// Solves `reps` independent sketches and keeps the candidate with the
/// smallest loss on one more, fresh sketch of the same size.
pub fn boosted_solve<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    t: &(impl EntryOracle + ?Sized),
    q: &[f64],
    p: NormIndex,
    s: usize,
    reps: usize,
    rng: &mut R,
) -> Result<BoostedSolution> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let plans = (0..reps)
        .map(|_| build_sample_plan(q, s, p, rng))
        .collect::<Result<Vec<_>>>()?;
    let select = build_sample_plan(q, s, p, rng)?;
    let candidates: Vec<Result<RegressionSolution>> =
        plans.par_iter().map(|pl| sketched_solve(a, t, p, pl)).collect();
    let (sa, sb) = sketch_operands(a, t, &select)?;
    let selection_losses: Vec<Option<f64>> = candidates
        .iter()
        .map(|c| c.as_ref().ok().map(|sol| loss(&sa, &sol.z, &sb, p)))
        .collect();
    let mut chosen = None;
    for (i, l) in selection_losses.iter().enumerate() {
        if let Some(l) = l {
            match chosen {
                Some((_, best)) if *l >= best => {}
                _ => chosen = Some((i, *l)),
            }
        }
    }
    let queries = s * (reps + 1);
    match chosen {
        Some((i, _)) => {
            let solution = candidates.into_iter().nth(i).unwrap()?;
            Ok(BoostedSolution {
                solution,
                chosen: i,
                selection_losses,
                queries,
            })
        }
        None => Err(candidates.into_iter().next().unwrap().unwrap_err()),
    }
}
