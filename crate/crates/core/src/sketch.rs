//! Row sampling and rescaling plans.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::norm::NormIndex;

/// Indices drawn i.i.d. (with replacement) from `q`, and the factors
/// `(s q_j)^{-1/p}` that rescale the sampled rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub p: NormIndex,
    pub s: usize,
    pub d: usize,
    pub indices: Vec<usize>,
    pub rescale: Vec<f64>,
    pub seed: u64,
    #[serde(skip)]
    pub q: Vec<f64>,
    pub q_hash: String,
}

pub fn hash_probs(q: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in q {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn check_probs(q: &[f64]) -> Result<()> {
    if q.is_empty() {
        return Err(Error::BadProbabilities("empty".into()));
    }
    if let Some(i) = q.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::BadProbabilities(format!("q[{i}] = {} is not positive", q[i])));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::BadProbabilities(format!("sum is {total}")));
    }
    Ok(())
}

fn rescale_factor(s: usize, q: f64, p: u32) -> f64 {
    let base = s as f64 * q;
    match p {
        1 => 1.0 / base,
        2 => 1.0 / base.sqrt(),
        _ => base.powf(-1.0 / p as f64),
    }
}

/// Draws a plan with a stream seeded from `seed`.
pub fn build_sample_plan_seeded(q: &[f64], s: usize, p: NormIndex, seed: u64) -> Result<SamplePlan> {
    check_probs(q)?;
    let pi = p
        .as_u32()
        .ok_or_else(|| Error::InvalidInput("sample plans need a finite p".into()))?;
    if s == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let dist = WeightedIndex::new(q).map_err(|e| Error::BadProbabilities(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..s).map(|_| dist.sample(&mut rng)).collect();
    let rescale = indices.iter().map(|&j| rescale_factor(s, q[j], pi)).collect();
    Ok(SamplePlan {
        p,
        s,
        d: q.len(),
        indices,
        rescale,
        seed,
        q: q.to_vec(),
        q_hash: hash_probs(q),
    })
}

/// Draws a plan; the caller's generator supplies the plan seed.
pub fn build_sample_plan<R: Rng + ?Sized>(
    q: &[f64],
    s: usize,
    p: NormIndex,
    rng: &mut R,
) -> Result<SamplePlan> {
    let seed = rng.next_u64();
    build_sample_plan_seeded(q, s, p, seed)
}

impl SamplePlan {
    /// Every row once, in order, under uniform probabilities.
    pub fn identity(d: usize, p: NormIndex) -> Result<SamplePlan> {
        let pi = p
            .as_u32()
            .ok_or_else(|| Error::InvalidInput("sample plans need a finite p".into()))?;
        let q = vec![1.0 / d as f64; d];
        Ok(SamplePlan {
            p,
            s: d,
            d,
            indices: (0..d).collect(),
            rescale: vec![rescale_factor(d, 1.0 / d as f64, pi); d],
            seed: 0,
            q_hash: hash_probs(&q),
            q,
        })
    }

    pub fn max_rescale(&self) -> f64 {
        self.rescale.iter().copied().fold(0.0, f64::max)
    }

    pub fn distinct(&self) -> usize {
        self.collapsed().len()
    }

    /// Distinct sampled rows with the combined scale `c^{1/p} * rescale`,
    /// where `c` is the multiplicity. The lp norm of the collapsed sketch
    /// equals that of the full one for every vector.
    pub fn collapsed(&self) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for (&j, &r) in self.indices.iter().zip(&self.rescale) {
            let e = acc.entry(j).or_insert((0, r));
            e.0 += 1;
        }
        acc.into_iter()
            .map(|(j, (c, r))| (j, self.p.root(c as f64) * r))
            .collect()
    }

    pub fn apply_mat(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.d {
            return Err(Error::ShapeMismatch {
                expected: self.d,
                found: m.nrows(),
            });
        }
        Ok(DMatrix::from_fn(self.s, m.ncols(), |t, c| {
            self.rescale[t] * m[(self.indices[t], c)]
        }))
    }

    pub fn apply_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.d {
            return Err(Error::ShapeMismatch {
                expected: self.d,
                found: v.len(),
            });
        }
        Ok(self
            .indices
            .iter()
            .zip(&self.rescale)
            .map(|(&j, &r)| r * v[j])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_full_plan_has_unit_rescale() {
        let q = vec![0.1; 10];
        let plan = build_sample_plan_seeded(&q, 10, NormIndex::Finite(2), 3).unwrap();
        assert!(plan.rescale.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let id = SamplePlan::identity(7, NormIndex::Finite(3)).unwrap();
        assert!(id.rescale.iter().all(|&r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn near_point_mass_draws_zero() {
        let d = 50;
        let rest = 1e-9 / (d - 1) as f64;
        let mut q = vec![rest; d];
        q[0] = 1.0 - 1e-9;
        let plan = build_sample_plan_seeded(&q, 1000, NormIndex::Finite(2), 1).unwrap();
        assert!(plan.indices.iter().all(|&j| j == 0));
    }

    #[test]
    fn bad_probabilities_rejected() {
        let p = NormIndex::Finite(2);
        assert!(matches!(
            build_sample_plan_seeded(&[0.5, 0.0, 0.5], 3, p, 0),
            Err(Error::BadProbabilities(_))
        ));
        assert!(matches!(
            build_sample_plan_seeded(&[0.5, 0.4], 3, p, 0),
            Err(Error::BadProbabilities(_))
        ));
    }

    #[test]
    fn pth_root_rescale() {
        let q = [0.25, 0.75];
        let plan = build_sample_plan_seeded(&q, 8, NormIndex::Finite(3), 5).unwrap();
        for (&j, &r) in plan.indices.iter().zip(&plan.rescale) {
            assert!((r - (8.0 * q[j]).powf(-1.0 / 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_plan_is_identity() {
        let m = DMatrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64);
        let plan = SamplePlan::identity(4, NormIndex::Finite(2)).unwrap();
        assert_eq!(plan.apply_mat(&m).unwrap(), m);
    }

    #[test]
    fn single_row_plan_on_vector() {
        let plan = build_sample_plan_seeded(&[1.0], 1, NormIndex::Finite(2), 0).unwrap();
        assert_eq!(plan.apply_vec(&[3.0]).unwrap(), vec![3.0]);
        assert!(plan.apply_vec(&[3.0, 1.0]).is_err());
    }

    #[test]
    fn collapsed_preserves_norm() {
        let q = [0.5, 0.3, 0.2];
        let v = [1.0, -2.0, 0.5];
        for p in [1u32, 2, 3] {
            let plan = build_sample_plan_seeded(&q, 9, NormIndex::Finite(p), 8).unwrap();
            let full = plan.apply_vec(&v).unwrap();
            let n_full = crate::norm::lp_norm(&full, plan.p);
            let col: Vec<f64> = plan.collapsed().iter().map(|&(j, c)| c * v[j]).collect();
            let n_col = crate::norm::lp_norm(&col, plan.p);
            assert!((n_full - n_col).abs() < 1e-12 * n_full.max(1.0));
        }
    }

    #[test]
    fn json_carries_audit_fields() {
        let plan = build_sample_plan_seeded(&[0.5, 0.5], 2, NormIndex::Finite(2), 4).unwrap();
        let j: serde_json::Value = serde_json::to_value(&plan).unwrap();
        for key in ["indices", "rescale", "seed", "p", "q_hash"] {
            assert!(j.get(key).is_some(), "{key}");
        }
    }
}
