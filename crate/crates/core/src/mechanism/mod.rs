//! Mechanisms over latent reports, the three robustification stages, and
//! exact auditors.

pub mod audit;
pub mod bounds;
pub mod table;
pub mod transforms;
pub mod valuation;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use audit::{audit_bic, audit_ir, revenue, BicAudit, RevenueEstimate, RevenueMode};
pub use bounds::{eta_mu_bounds, revenue_deficit_bound, rho_upper_bound, BoundParams};
pub use table::MechanismTable;
pub use transforms::{
    build_m1, build_m2, build_m_ell, build_robust, AuctionOutcome, RobustMechanism, RobustOptions, RobustParams,
};
pub use valuation::{LatentValuation, ValuationFamily, ValuationSpec};

/// Set of items as a bitmask; `0` is the empty bundle.
pub type Bundle = u32;

/// One outcome of a randomized mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub prob: f64,
    pub bundles: Vec<Bundle>,
    pub payments: Vec<f64>,
}

/// Full distribution over outcomes for one bid profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lottery {
    pub branches: Vec<Branch>,
}

impl Lottery {
    pub fn certain(bundles: Vec<Bundle>, payments: Vec<f64>) -> Self {
        Lottery {
            branches: vec![Branch {
                prob: 1.0,
                bundles,
                payments,
            }],
        }
    }

    pub fn expected_payment(&self, i: usize) -> f64 {
        self.branches.iter().map(|b| b.prob * b.payments[i]).sum()
    }

    pub fn total_payment(&self) -> f64 {
        self.branches
            .iter()
            .map(|b| b.prob * b.payments.iter().sum::<f64>())
            .sum()
    }

    /// Draws one branch.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Outcome {
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let mut acc = 0.0;
        let last = self.branches.len() - 1;
        for (i, b) in self.branches.iter().enumerate() {
            acc += b.prob;
            if u < acc || i == last {
                return Outcome {
                    bundles: b.bundles.clone(),
                    payments: b.payments.clone(),
                };
            }
        }
        unreachable!()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub bundles: Vec<Bundle>,
    pub payments: Vec<f64>,
}

/// A direct mechanism over latent reports.
pub trait Mechanism: Send + Sync {
    fn bidders(&self) -> usize;

    /// Exact outcome distribution for a bid profile.
    fn lottery(&self, bids: &[Vec<f64>]) -> Result<Lottery>;

    /// One execution, drawing any internal randomness from `rng`.
    fn realize(&self, bids: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<Outcome> {
        Ok(self.lottery(bids)?.sample(rng))
    }

    /// Names of the stages from the outermost inwards.
    fn stages(&self) -> Vec<String>;
}
