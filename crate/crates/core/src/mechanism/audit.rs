//! Exact IR, BIC and revenue audits on finite product distributions.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dist::DiscreteDist;
use crate::error::{Error, Result};

use super::table::profiles;
use super::valuation::LatentValuation;
use super::{Lottery, Mechanism};

/// Largest number of profiles an exact audit enumerates.
pub const PROFILE_CAP: usize = 1_000_000;

fn check_size(dists: &[DiscreteDist]) -> Result<()> {
    let mut size: usize = 1;
    for d in dists {
        size = size.saturating_mul(d.len());
    }
    if size > PROFILE_CAP {
        return Err(Error::TooLarge { size, cap: PROFILE_CAP });
    }
    Ok(())
}

/// Branch-wise utilities of bidder `i` with true type `t`.
fn utility<'a>(l: &'a Lottery, i: usize, t: &[f64], vals: &LatentValuation) -> impl Iterator<Item = (f64, f64)> + 'a {
    let v: Vec<f64> = l.branches.iter().map(|b| vals.value(t, b.bundles[i])).collect();
    l.branches
        .iter()
        .zip(v)
        .map(move |(b, v)| (b.prob, v - b.payments[i]))
}

/// Worst ex-post IR violation `max(0, -min utility)` over all profiles,
/// bidders and outcome branches of positive probability.
pub fn audit_ir(m: &dyn Mechanism, dists: &[DiscreteDist], vals: &LatentValuation) -> Result<f64> {
    check_size(dists)?;
    let sizes: Vec<usize> = dists.iter().map(|d| d.len()).collect();
    let mut worst: f64 = 0.0;
    for prof in profiles(&sizes) {
        let bids: Vec<Vec<f64>> = prof.iter().enumerate().map(|(i, &j)| dists[i].support()[j].clone()).collect();
        let l = m.lottery(&bids)?;
        for (i, bid) in bids.iter().enumerate() {
            for (prob, u) in utility(&l, i, bid, vals) {
                if prob > 0.0 {
                    worst = worst.max(-u);
                }
            }
        }
    }
    // fold -0.0 into 0.0
    Ok(worst + 0.0)
}

/// Interim regrets `U_i(t,r) - U_i(t,t)` (gain from misreporting `r`) for every bidder, type and misreport.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicAudit {
    /// `regret[i][t][r]`; `r` indexes the type support followed by any extra
    /// misreports.
    pub regret: Vec<Vec<Vec<f64>>>,
    pub type_probs: Vec<Vec<f64>>,
}

impl BicAudit {
    /// Largest positive regret.
    pub fn eta(&self) -> f64 {
        self.regret
            .iter()
            .flatten()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Largest mass of types (over bidders and misreports) whose regret
    /// exceeds `threshold`.
    pub fn mu(&self, threshold: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (reg, probs) in self.regret.iter().zip(&self.type_probs) {
            let reports = reg.first().map_or(0, |r| r.len());
            for r in 0..reports {
                let mass: f64 = reg
                    .iter()
                    .zip(probs)
                    .filter(|(row, _)| row[r] > threshold)
                    .map(|(_, p)| p)
                    .sum();
                worst = worst.max(mass);
            }
        }
        worst + 0.0
    }

    /// Mass of types that have some misreport with regret above `threshold`,
    /// maximized over bidders.
    pub fn mu_any(&self, threshold: f64) -> f64 {
        self.regret
            .iter()
            .zip(&self.type_probs)
            .map(|(reg, probs)| {
                reg.iter()
                    .zip(probs)
                    .filter(|(row, _)| row.iter().any(|&v| v > threshold))
                    .map(|(_, p)| p)
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
            + 0.0
    }
}

/// Exact interim regrets under the product distribution `dists`.
///
/// Misreports range over each bidder's type support plus
/// `extra_reports[i]`, if given.
pub fn audit_bic(
    m: &dyn Mechanism,
    dists: &[DiscreteDist],
    vals: &LatentValuation,
    extra_reports: Option<&[Vec<Vec<f64>>]>,
) -> Result<BicAudit> {
    check_size(dists)?;
    let n = dists.len();
    let mut regret = Vec::with_capacity(n);
    for i in 0..n {
        let types = dists[i].support();
        let mut reports: Vec<Vec<f64>> = types.to_vec();
        if let Some(extra) = extra_reports {
            reports.extend(extra[i].iter().cloned());
        }
        let others: Vec<&DiscreteDist> = (0..n).filter(|&j| j != i).map(|j| &dists[j]).collect();
        let sizes: Vec<usize> = others.iter().map(|d| d.len()).collect();
        let opp = profiles(&sizes);
        // interim[t][r] = U_i(type t, report r)
        let mut interim = vec![vec![0.0; reports.len()]; types.len()];
        for prof in &opp {
            let w: f64 = prof.iter().zip(&others).map(|(&j, d)| d.probs()[j]).product();
            for (r, rep) in reports.iter().enumerate() {
                let mut bids = Vec::with_capacity(n);
                let mut it = prof.iter().zip(&others);
                for j in 0..n {
                    if j == i {
                        bids.push(rep.clone());
                    } else {
                        let (&idx, d) = it.next().unwrap();
                        bids.push(d.support()[idx].clone());
                    }
                }
                let l = m.lottery(&bids)?;
                for (t, ty) in types.iter().enumerate() {
                    let u: f64 = utility(&l, i, ty, vals).map(|(p, u)| p * u).sum();
                    interim[t][r] += w * u;
                }
            }
        }
        let reg: Vec<Vec<f64>> = interim
            .iter()
            .enumerate()
            .map(|(t, row)| row.iter().map(|&u| u - row[t]).collect())
            .collect();
        regret.push(reg);
    }
    Ok(BicAudit {
        regret,
        type_probs: dists.iter().map(|d| d.probs().to_vec()).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueMode {
    Exact,
    MonteCarlo { samples: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevenueEstimate {
    pub value: f64,
    pub std_err: f64,
}

/// Expected total payment under truthful reports.
pub fn revenue(
    m: &dyn Mechanism,
    dists: &[DiscreteDist],
    mode: RevenueMode,
    rng: Option<&mut dyn RngCore>,
) -> Result<RevenueEstimate> {
    match mode {
        RevenueMode::Exact => {
            check_size(dists)?;
            let sizes: Vec<usize> = dists.iter().map(|d| d.len()).collect();
            let mut total = 0.0;
            for prof in profiles(&sizes) {
                let w: f64 = prof.iter().enumerate().map(|(i, &j)| dists[i].probs()[j]).product();
                let bids: Vec<Vec<f64>> =
                    prof.iter().enumerate().map(|(i, &j)| dists[i].support()[j].clone()).collect();
                total += w * m.lottery(&bids)?.total_payment();
            }
            Ok(RevenueEstimate { value: total, std_err: 0.0 })
        }
        RevenueMode::MonteCarlo { samples } => {
            let rng = rng.ok_or_else(|| Error::InvalidInput("Monte-Carlo revenue needs an RNG".into()))?;
            if samples < 2 {
                return Err(Error::InvalidInput("need at least two samples".into()));
            }
            let mut xs = Vec::with_capacity(samples);
            for _ in 0..samples {
                let bids: Vec<Vec<f64>> = dists.iter().map(|d| d.sample(&mut *rng).to_vec()).collect();
                let out = m.realize(&bids, &mut *rng)?;
                xs.push(out.payments.iter().sum::<f64>());
            }
            let mean = xs.iter().sum::<f64>() / samples as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
            Ok(RevenueEstimate {
                value: mean,
                std_err: (var / samples as f64).sqrt(),
            })
        }
    }
}
