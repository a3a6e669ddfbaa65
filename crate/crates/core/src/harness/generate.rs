use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::DiscreteDist;
use crate::error::{Error, Result};
use crate::io::read_mat;
use crate::matrix::Mat;
use crate::norm::NormIndex;
use crate::protocol::random_with_norm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchetypeFamily {
    /// i.i.d. standard normal entries.
    Gaussian,
    /// Orthonormal columns (QR of a Gaussian matrix).
    Orthonormal,
    /// Orthonormal columns with the last one scaled to `1e-3`.
    NearSingular,
    /// i.i.d. `U[0, 1/k]` entries; nonnegative, with row sums at most 1.
    Uniform,
    FromFile(PathBuf),
}

pub fn gen_archetypes<R: Rng + ?Sized>(family: ArchetypeFamily, d: usize, k: usize, rng: &mut R) -> Result<Mat> {
    if d < k || k == 0 {
        return Err(Error::InvalidInput(format!("need d >= k >= 1, got {d}x{k}")));
    }
    let gaussian = |rng: &mut R| DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    match family {
        ArchetypeFamily::Gaussian => Mat::new(gaussian(rng)),
        ArchetypeFamily::Orthonormal | ArchetypeFamily::NearSingular => {
            let mut q = gaussian(rng).qr().q();
            if family == ArchetypeFamily::NearSingular {
                q.column_mut(k - 1).scale_mut(1e-3);
            }
            Mat::new(q)
        }
        ArchetypeFamily::Uniform => Mat::new(DMatrix::from_fn(d, k, |_, _| rng.random::<f64>() / k as f64)),
        ArchetypeFamily::FromFile(path) => {
            let a = read_mat(&path)?;
            if a.rows() != d || a.cols() != k {
                return Err(Error::ShapeMismatch {
                    expected: d * k,
                    found: a.rows() * a.cols(),
                });
            }
            Ok(a)
        }
    }
}

/// Random prior with `size` distinct points on the grid `{0, 1/g, ..., 1}^k`
/// and probabilities proportional to `U[0.5, 1.5]` draws.
pub fn gen_dhat<R: Rng + ?Sized>(k: usize, size: usize, grid: usize, rng: &mut R) -> Result<DiscreteDist> {
    let cells = (grid + 1).checked_pow(k as u32).unwrap_or(usize::MAX);
    if size == 0 || size > cells {
        return Err(Error::InvalidInput(format!("cannot place {size} points on the grid")));
    }
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(size);
    while pts.len() < size {
        let x: Vec<f64> = (0..k)
            .map(|_| rng.random_range(0..=grid) as f64 / grid as f64)
            .collect();
        if !pts.contains(&x) {
            pts.push(x);
        }
    }
    let w: Vec<f64> = (0..size).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = w.iter().sum();
    DiscreteDist::new(pts, w.iter().map(|v| v / total).collect())
}

/// A perturbed distribution and a coupling with the base that witnesses a
/// Prokhorov distance of at most `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedDist {
    pub dist: DiscreteDist,
    /// `(base index, new index, mass)` triples.
    pub coupling: Vec<(usize, usize, f64)>,
    pub eps: f64,
}

impl PerturbedDist {
    /// Checks marginals and that mass farther than `eps` is at most `eps`.
    pub fn verify(&self, base: &DiscreteDist, p: NormIndex) -> bool {
        let mut left = vec![0.0; base.len()];
        let mut right = vec![0.0; self.dist.len()];
        let mut far = 0.0;
        for &(i, j, m) in &self.coupling {
            left[i] += m;
            right[j] += m;
            if crate::norm::lp_dist(&base.support()[i], &self.dist.support()[j], p) > self.eps {
                far += m;
            }
        }
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        close(&left, base.probs()) && close(&right, self.dist.probs()) && far <= self.eps + 1e-12
    }
}

fn clamp01(x: Vec<f64>) -> Vec<f64> {
    x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Keeps a `1 - eps` share of each atom within lp distance `eps` of it and
/// moves the remaining `eps` share to a uniform random point of the cube.
pub fn gen_perturbed_dist<R: Rng + ?Sized>(
    base: &DiscreteDist,
    eps: f64,
    p: NormIndex,
    rng: &mut R,
) -> Result<PerturbedDist> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidInput(format!("eps = {eps} must lie in [0, 1)")));
    }
    let k = base.dim();
    let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut origin: Vec<usize> = Vec::new();
    for (i, (x, prob)) in base.atoms().enumerate() {
        let r = eps * rng.random::<f64>();
        let u = random_with_norm(k, p, r, rng);
        let near = clamp01(x.iter().zip(&u).map(|(a, b)| a + b).collect());
        atoms.push((near, (1.0 - eps) * prob));
        origin.push(i);
        if eps > 0.0 {
            let far: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            atoms.push((far, eps * prob));
            origin.push(i);
        }
    }
    let dist = DiscreteDist::from_weighted(atoms.clone())?;
    let coupling = atoms
        .iter()
        .zip(&origin)
        .map(|((x, m), &i)| (i, dist.index_of(x).expect("merged point exists"), *m))
        .collect();
    Ok(PerturbedDist { dist, coupling, eps })
}

/// Generator of trial `t` under master seed `seed`: a dedicated ChaCha stream.
pub fn trial_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64 + 1);
    rng
}
