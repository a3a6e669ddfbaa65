//! Mechanisms stored as explicit tables over a product of finite supports.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::DiscreteDist;
use crate::error::{Error, Result};

use super::valuation::LatentValuation;
use super::{Branch, Bundle, Lottery, Mechanism};

/// Reports within this max-norm distance of a support point match it.
pub const MATCH_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub profile: Vec<usize>,
    pub lottery: Lottery,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismTable {
    pub supports: Vec<Vec<Vec<f64>>>,
    /// One entry per profile, in mixed-radix order (last bidder fastest).
    pub entries: Vec<TableEntry>,
}

/// All index profiles of a product of supports with the given sizes.
pub fn profiles(sizes: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = sizes.iter().product();
    (0..total)
        .map(|mut r| {
            let mut prof = vec![0; sizes.len()];
            for i in (0..sizes.len()).rev() {
                prof[i] = r % sizes[i];
                r /= sizes[i];
            }
            prof
        })
        .collect()
}

fn flat_index(sizes: &[usize], prof: &[usize]) -> usize {
    prof.iter().zip(sizes).fold(0, |acc, (&p, &s)| acc * s + p)
}

impl MechanismTable {
    /// Builds a table by evaluating `rule` on every profile of support points.
    pub fn from_rule<F>(supports: Vec<Vec<Vec<f64>>>, mut rule: F) -> Result<Self>
    where
        F: FnMut(&[usize], &[&[f64]]) -> Lottery,
    {
        let sizes: Vec<usize> = supports.iter().map(|s| s.len()).collect();
        let n = supports.len();
        let mut entries = Vec::new();
        for prof in profiles(&sizes) {
            let pts: Vec<&[f64]> = prof.iter().enumerate().map(|(i, &j)| supports[i][j].as_slice()).collect();
            let lottery = rule(&prof, &pts);
            if lottery.branches.iter().any(|b| b.bundles.len() != n || b.payments.len() != n) {
                return Err(Error::InvalidInput("rule returned a lottery of the wrong width".into()));
            }
            let mass: f64 = lottery.branches.iter().map(|b| b.prob).sum();
            if (mass - 1.0).abs() > 1e-9 {
                return Err(Error::BadProbabilities(format!("branch mass {mass}")));
            }
            entries.push(TableEntry { profile: prof, lottery });
        }
        Ok(MechanismTable { supports, entries })
    }

    fn sizes(&self) -> Vec<usize> {
        self.supports.iter().map(|s| s.len()).collect()
    }

    fn locate(&self, i: usize, bid: &[f64]) -> Result<usize> {
        self.supports[i]
            .iter()
            .position(|s| {
                s.len() == bid.len()
                    && s.iter().zip(bid).all(|(a, b)| (a - b).abs() <= MATCH_TOL)
            })
            .ok_or(Error::NotInSupport)
    }

    pub fn entry(&self, prof: &[usize]) -> &TableEntry {
        &self.entries[flat_index(&self.sizes(), prof)]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl Mechanism for MechanismTable {
    fn bidders(&self) -> usize {
        self.supports.len()
    }

    fn lottery(&self, bids: &[Vec<f64>]) -> Result<Lottery> {
        if bids.len() != self.bidders() {
            return Err(Error::ShapeMismatch {
                expected: self.bidders(),
                found: bids.len(),
            });
        }
        let prof = bids
            .iter()
            .enumerate()
            .map(|(i, b)| self.locate(i, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.entry(&prof).lottery.clone())
    }

    fn stages(&self) -> Vec<String> {
        vec!["table".into()]
    }
}

fn supports_of(dists: &[DiscreteDist]) -> Vec<Vec<Vec<f64>>> {
    dists.iter().map(|d| d.support().to_vec()).collect()
}

/// Single-bundle second-price auction with a reserve, run on latent values
/// `v^A(z_i, bundle)`. Ties go to the lowest bidder index.
pub fn second_price_with_reserve(
    dists: &[DiscreteDist],
    vals: &LatentValuation,
    bundle: Bundle,
    reserve: f64,
) -> Result<MechanismTable> {
    let n = dists.len();
    MechanismTable::from_rule(supports_of(dists), |_, pts| {
        let v: Vec<f64> = pts.iter().map(|z| vals.value(z, bundle)).collect();
        let mut win = 0;
        for i in 1..n {
            if v[i] > v[win] {
                win = i;
            }
        }
        let mut bundles = vec![0; n];
        let mut pay = vec![0.0; n];
        if v[win] >= reserve {
            let second = (0..n).filter(|&i| i != win).map(|i| v[i]).fold(reserve, f64::max);
            bundles[win] = bundle;
            pay[win] = second;
        }
        Lottery::certain(bundles, pay)
    })
}

/// Random single-bundle mechanism made BIC and IR by payment repair.
///
/// Allocation: an affine maximizer over `lambda_i v_i + c_i` with random
/// weights; the winner receives the bundle with a random per-bidder
/// probability. Interim payments start at a random fraction of interim
/// value and are lowered until every pairwise incentive constraint holds
/// (a shortest-path relaxation). Each ex-post payment is charged only in the
/// branch where the bundle is delivered, scaled so the interim expectation
/// matches.
pub fn random_repaired<R: Rng + ?Sized>(
    dists: &[DiscreteDist],
    vals: &LatentValuation,
    bundle: Bundle,
    rng: &mut R,
) -> Result<MechanismTable> {
    let n = dists.len();
    let sizes: Vec<usize> = dists.iter().map(|d| d.len()).collect();
    let all = profiles(&sizes);
    let values: Vec<Vec<f64>> = dists
        .iter()
        .map(|d| d.support().iter().map(|z| vals.value(z, bundle)).collect())
        .collect();
    for _attempt in 0..50 {
        let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let shift: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
        // delivery probability of each bidder
        let deliver: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.0)).collect();
        let alloc: Vec<(Option<usize>, f64)> = all
            .iter()
            .map(|prof| {
                let score = |i: usize| lambda[i] * values[i][prof[i]] + shift[i];
                let mut win = 0;
                for i in 1..n {
                    if score(i) > score(win) {
                        win = i;
                    }
                }
                if score(win) > 0.0 && values[win][prof[win]] > 0.0 {
                    (Some(win), deliver[win])
                } else {
                    (None, 0.0)
                }
            })
            .collect();
        // interim delivery probability X_i(t)
        let mut x: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        for (prof, (win, q)) in all.iter().zip(&alloc) {
            let Some(w) = *win else { continue };
            let mut pr = 1.0;
            for j in 0..n {
                if j != w {
                    pr *= dists[j].probs()[prof[j]];
                }
            }
            x[w][prof[w]] += pr * q;
        }
        let mut pay: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..sizes[i])
                    .map(|t| values[i][t] * x[i][t] * rng.random_range(0.3..1.0))
                    .collect()
            })
            .collect();
        let mut ok = true;
        for i in 0..n {
            let m = sizes[i];
            for _pass in 0..=m {
                let mut changed = false;
                for t in 0..m {
                    for r in 0..m {
                        let cap = pay[i][r] + values[i][t] * (x[i][t] - x[i][r]);
                        if cap < pay[i][t] - 1e-15 {
                            pay[i][t] = cap;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            let violated = (0..m).any(|t| (0..m).any(|r| pay[i][t] > pay[i][r] + values[i][t] * (x[i][t] - x[i][r]) + 1e-12));
            if violated || pay[i].iter().any(|&p| p < -1e-12) {
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        return MechanismTable::from_rule(supports_of(dists), |prof, _| {
            let idx = flat_index(&sizes, prof);
            let (win, q) = alloc[idx];
            let Some(w) = win else {
                return Lottery::certain(vec![0; n], vec![0.0; n]);
            };
            let t = prof[w];
            let per_unit = if x[w][t] > 0.0 { (pay[w][t] / x[w][t]).max(0.0) } else { 0.0 };
            let mut got = vec![0; n];
            got[w] = bundle;
            let mut charged = vec![0.0; n];
            charged[w] = per_unit;
            let mut branches = vec![Branch {
                prob: q,
                bundles: got,
                payments: charged,
            }];
            if q < 1.0 {
                branches.push(Branch {
                    prob: 1.0 - q,
                    bundles: vec![0; n],
                    payments: vec![0.0; n],
                });
            }
            Lottery { branches }
        });
    }
    Err(Error::SolverFailure("payment repair produced negative payments".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Mat;
    use crate::mechanism::valuation::ValuationSpec;

    fn toy_vals() -> LatentValuation {
        LatentValuation::new(ValuationSpec::additive(1), Mat::identity(1)).unwrap()
    }

    #[test]
    fn profile_order_is_mixed_radix() {
        assert_eq!(profiles(&[2, 3]).len(), 6);
        assert_eq!(profiles(&[2, 3])[4], vec![1, 1]);
        assert_eq!(flat_index(&[2, 3], &[1, 1]), 4);
    }

    #[test]
    fn second_price_outcomes() {
        let d = DiscreteDist::uniform(vec![vec![0.2], vec![0.5], vec![0.9]]).unwrap();
        let m = second_price_with_reserve(&[d.clone(), d], &toy_vals(), 1, 0.3).unwrap();
        let l = m.lottery(&[vec![0.9], vec![0.5]]).unwrap();
        assert_eq!(l.branches[0].bundles, vec![1, 0]);
        assert_eq!(l.branches[0].payments, vec![0.5, 0.0]);
        let l = m.lottery(&[vec![0.2], vec![0.2]]).unwrap();
        assert_eq!(l.branches[0].bundles, vec![0, 0]);
        let l = m.lottery(&[vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(l.branches[0].bundles, vec![1, 0]);
        assert_eq!(l.branches[0].payments[0], 0.5);
        assert!(matches!(m.lottery(&[vec![0.4], vec![0.5]]), Err(Error::NotInSupport)));
    }

    #[test]
    fn json_roundtrip() {
        let d = DiscreteDist::uniform(vec![vec![0.2], vec![0.7]]).unwrap();
        let m = second_price_with_reserve(&[d.clone(), d], &toy_vals(), 1, 0.0).unwrap();
        let back = MechanismTable::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_json().contains("\"profile\":[1,0]"));
    }
}
