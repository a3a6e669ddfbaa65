use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Mat;

use super::Bundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationFamily {
    /// `t` holds one value per item and `v(t,S) = sum_{j in S} t_j`.
    Additive,
    /// `t` holds one value per non-empty bundle, indexed by `S - 1`.
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValuationSpec {
    pub family: ValuationFamily,
    pub items: usize,
    /// Lipschitz constant with respect to the max norm on types.
    pub lipschitz: f64,
}

impl ValuationSpec {
    pub fn additive(items: usize) -> Self {
        ValuationSpec {
            family: ValuationFamily::Additive,
            items,
            lipschitz: items as f64,
        }
    }

    pub fn table(items: usize) -> Self {
        ValuationSpec {
            family: ValuationFamily::Table,
            items,
            lipschitz: 1.0,
        }
    }

    /// Dimension of the type vector.
    pub fn type_dim(&self) -> usize {
        match self.family {
            ValuationFamily::Additive => self.items,
            ValuationFamily::Table => (1usize << self.items) - 1,
        }
    }

    pub fn value(&self, t: &[f64], s: Bundle) -> f64 {
        if s == 0 {
            return 0.0;
        }
        match self.family {
            ValuationFamily::Additive => (0..self.items)
                .filter(|j| s >> j & 1 == 1)
                .map(|j| t[j])
                .sum(),
            ValuationFamily::Table => t[s as usize - 1],
        }
    }

    /// Largest observed `|v(t,S) - v(t',S)| / ||t - t'||_inf` over random
    /// pairs in `[lo, hi]^d`.
    pub fn lipschitz_spot_check<R: Rng + ?Sized>(&self, pairs: usize, lo: f64, hi: f64, rng: &mut R) -> f64 {
        let d = self.type_dim();
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let t: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
            let gap = t.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if gap == 0.0 {
                continue;
            }
            for s in 1..(1u32 << self.items) {
                worst = worst.max((self.value(&t, s) - self.value(&u, s)).abs() / gap);
            }
        }
        worst
    }
}

/// `v^A(z,S) = v(Az,S)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentValuation {
    pub spec: ValuationSpec,
    pub a: Mat,
}

impl LatentValuation {
    pub fn new(spec: ValuationSpec, a: Mat) -> Result<Self> {
        if a.rows() != spec.type_dim() {
            return Err(Error::ShapeMismatch {
                expected: spec.type_dim(),
                found: a.rows(),
            });
        }
        Ok(LatentValuation { spec, a })
    }

    pub fn k(&self) -> usize {
        self.a.cols()
    }

    pub fn value(&self, z: &[f64], s: Bundle) -> f64 {
        if s == 0 {
            return 0.0;
        }
        self.spec.value(&self.a.mul_vec(z), s)
    }

    pub fn a_norm(&self) -> f64 {
        self.a.inf_norm()
    }

    /// `k ||A||_inf L`, a Lipschitz constant of `v^A` in the max norm.
    pub fn latent_lipschitz(&self) -> f64 {
        self.k() as f64 * self.a_norm() * self.spec.lipschitz
    }

    pub fn bundles(&self) -> u32 {
        1u32 << self.spec.items
    }
}
