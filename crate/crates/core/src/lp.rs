//! Small linear programs on top of `microlp`.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn solve(p: &Problem) -> Result<microlp::Solution> {
    let out = p
        .solve()
        .map_err(|e| Error::SolverFailure(format!("lp status: {e:?}")))?;
    out.into_solution()
        .map_err(|_| Error::SolverFailure("lp status: interrupted".into()))
}

/// Dual of least absolute deviations:
/// `max b'u  s.t.  A'u = 0, -1 <= u <= 1`.
/// Returns the optimal value (equal to `min ||Az - b||_1`) and `u`.
pub fn lad_dual(a: &DMatrix<f64>, b: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (d, k) = a.shape();
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let u: Vec<_> = (0..d).map(|i| p.add_var(b[i], (-1.0, 1.0))).collect();
    for j in 0..k {
        let row: Vec<_> = (0..d)
            .filter(|&i| a[(i, j)] != 0.0)
            .map(|i| (u[i], a[(i, j)]))
            .collect();
        p.add_constraint(&row[..], ComparisonOp::Eq, 0.0);
    }
    let sol = solve(&p)?;
    let uv = u.iter().map(|&v| sol.var_value(v)).collect();
    Ok((sol.objective(), uv))
}

/// Primal least absolute deviations:
/// `min sum e  s.t.  -e <= Az - b <= e`.
pub fn lad_primal(a: &DMatrix<f64>, b: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (d, k) = a.shape();
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let z: Vec<_> = (0..k)
        .map(|_| p.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let e: Vec<_> = (0..d).map(|_| p.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for i in 0..d {
        let mut hi: Vec<_> = (0..k).map(|j| (z[j], a[(i, j)])).collect();
        hi.push((e[i], 1.0));
        p.add_constraint(&hi[..], ComparisonOp::Ge, b[i]);
        let mut lo: Vec<_> = (0..k).map(|j| (z[j], -a[(i, j)])).collect();
        lo.push((e[i], 1.0));
        p.add_constraint(&lo[..], ComparisonOp::Ge, -b[i]);
    }
    let sol = solve(&p)?;
    Ok((z.iter().map(|&v| sol.var_value(v)).collect(), sol.objective()))
}

/// Minimum of `||Ax||_1` over `x` in the orthant with sign pattern `signs`
/// and `||x||_1 = 1`, computed through its dual
/// `max lambda  s.t.  lambda <= s_j (A'u)_j,  -1 <= u <= 1`.
pub fn orthant_min_l1(a: &DMatrix<f64>, signs: &[f64]) -> Result<f64> {
    let (d, k) = a.shape();
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let lambda = p.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let u: Vec<_> = (0..d).map(|_| p.add_var(0.0, (-1.0, 1.0))).collect();
    for j in 0..k {
        let mut row: Vec<_> = (0..d)
            .filter(|&i| a[(i, j)] != 0.0)
            .map(|i| (u[i], -signs[j] * a[(i, j)]))
            .collect();
        row.push((lambda, 1.0));
        p.add_constraint(&row[..], ComparisonOp::Le, 0.0);
    }
    Ok(solve(&p)?.objective())
}

/// Largest mass a coupling of `f` and `g` can put on the `allowed` pairs
/// (a transportation problem with row and column capacities).
pub fn max_coupled_mass(f: &[f64], g: &[f64], allowed: &[(usize, usize)]) -> Result<f64> {
    if allowed.is_empty() {
        return Ok(0.0);
    }
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let x: Vec<_> = allowed.iter().map(|_| p.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for (i, &fi) in f.iter().enumerate() {
        let row: Vec<_> = allowed
            .iter()
            .zip(&x)
            .filter(|((a, _), _)| *a == i)
            .map(|(_, &v)| (v, 1.0))
            .collect();
        if !row.is_empty() {
            p.add_constraint(&row[..], ComparisonOp::Le, fi);
        }
    }
    for (j, &gj) in g.iter().enumerate() {
        let col: Vec<_> = allowed
            .iter()
            .zip(&x)
            .filter(|((_, b), _)| *b == j)
            .map(|(_, &v)| (v, 1.0))
            .collect();
        if !col.is_empty() {
            p.add_constraint(&col[..], ComparisonOp::Le, gj);
        }
    }
    Ok(solve(&p)?.objective())
}
