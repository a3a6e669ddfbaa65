//! Exact least absolute deviations by basis exchange.
//!
//! An optimum of `min ||Az - b||_1` sits at a vertex where `k` independent
//! rows have zero residual. Starting from the rows closest to zero at the
//! least-squares fit, each step releases one basic row along the steepest
//! edge and walks to the weighted median of the breakpoints. The vertex is
//! optimal once the dual multipliers of the basic rows lie in `[-1, 1]`.

use nalgebra::{DMatrix, DVector};

/// Pivot budget per column.
const PIVOTS_PER_COL: usize = 60;

struct Rows {
    data: Vec<f64>,
    k: usize,
}

impl Rows {
    fn new(a: &DMatrix<f64>) -> Self {
        let (d, k) = a.shape();
        let mut data = Vec::with_capacity(d * k);
        for i in 0..d {
            for j in 0..k {
                data.push(a[(i, j)]);
            }
        }
        Rows { data, k }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    fn dot(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// Greedy basis: rows in increasing `|r_i|`, kept when independent of the
/// rows already chosen.
fn initial_basis(rows: &Rows, order: &[usize]) -> Option<Vec<usize>> {
    let k = rows.k;
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut basis = Vec::with_capacity(k);
    for &i in order {
        let a = rows.row(i);
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut v = a.to_vec();
        for _ in 0..2 {
            for q in &ortho {
                let c: f64 = v.iter().zip(q).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let rest: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rest > 1e-8 * norm {
            v.iter_mut().for_each(|x| *x /= rest);
            ortho.push(v);
            basis.push(i);
            if basis.len() == k {
                return Some(basis);
            }
        }
    }
    None
}

fn basis_inverse(rows: &Rows, basis: &[usize]) -> Option<DMatrix<f64>> {
    let k = rows.k;
    let m = DMatrix::from_fn(k, k, |r, c| rows.row(basis[r])[c]);
    m.try_inverse()
}

/// Exact LAD fit, or `None` when the design is rank deficient or a
/// degenerate vertex stalls the exchange (callers fall back to an LP).
pub fn lad_vertex(a: &DMatrix<f64>, b: &[f64]) -> Option<(Vec<f64>, f64)> {
    let (d, k) = a.shape();
    if d < k || b.len() != d || k == 0 {
        return None;
    }
    let rows = Rows::new(a);
    let start = a.clone().svd(true, true).solve(&DVector::from_column_slice(b), 1e-12).ok()?;
    let r0: Vec<f64> = (0..d).map(|i| rows.dot(i, start.as_slice()) - b[i]).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| r0[x].abs().total_cmp(&r0[y].abs()).then(x.cmp(&y)));
    let mut basis = initial_basis(&rows, &order)?;
    let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-11 * scale;
    let mut in_basis = vec![false; d];
    for _ in 0..PIVOTS_PER_COL * k + 100 {
        let inv = basis_inverse(&rows, &basis)?;
        let bb = DVector::from_iterator(k, basis.iter().map(|&i| b[i]));
        let z = &inv * bb;
        in_basis.iter_mut().for_each(|v| *v = false);
        basis.iter().for_each(|&i| in_basis[i] = true);
        let r: Vec<f64> = (0..d)
            .map(|i| if in_basis[i] { 0.0 } else { rows.dot(i, z.as_slice()) - b[i] })
            .collect();
        let mut g = DVector::zeros(k);
        for i in (0..d).filter(|&i| !in_basis[i] && r[i].abs() > tol) {
            let s = r[i].signum();
            for (gj, aj) in g.iter_mut().zip(rows.row(i)) {
                *gj += s * aj;
            }
        }
        // A_B^T u = -g
        let u = -(inv.transpose() * g);
        let mut cands: Vec<usize> = (0..k).filter(|&j| u[j].abs() > 1.0 + 1e-10).collect();
        if cands.is_empty() {
            let loss = (0..d).map(|i| (rows.dot(i, z.as_slice()) - b[i]).abs()).sum();
            return Some((z.as_slice().to_vec(), loss));
        }
        cands.sort_by(|&x, &y| u[y].abs().total_cmp(&u[x].abs()));
        let mut moved = false;
        for j in cands {
            let t = u[j].signum();
            let dir: Vec<f64> = inv.column(j).iter().map(|v| t * v).collect();
            let c: Vec<f64> = (0..d)
                .map(|i| if in_basis[i] { 0.0 } else { rows.dot(i, &dir) })
                .collect();
            let mut slope = 1.0 - u[j].abs();
            let mut bps: Vec<(f64, usize)> = Vec::new();
            for i in (0..d).filter(|&i| !in_basis[i]) {
                if r[i].abs() <= tol {
                    slope += c[i].abs();
                } else if r[i] * c[i] < 0.0 {
                    bps.push((-r[i] / c[i], i));
                }
            }
            if slope >= -1e-12 {
                continue;
            }
            bps.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let entering = bps.iter().find_map(|&(_, i)| {
                slope += 2.0 * c[i].abs();
                (slope >= 0.0).then_some(i)
            });
            let i = entering?;
            basis[j] = i;
            moved = true;
            break;
        }
        if !moved {
            return None;
        }
    }
    None
}
