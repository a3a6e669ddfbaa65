use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{Bundle, ValuationFamily, ValuationSpec};
use crate::norm::NormIndex;

use super::generate::ArchetypeFamily;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFamily {
    /// "What is your value for bundle S?" Answers are exact, so `eps_nq = 0`.
    #[default]
    Value,
    Noisy,
}

/// Type-space recovery: each bidder's type is `Az + e_mdl + e_nq`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySpec {
    #[serde(default)]
    pub s_override: Option<usize>,
    #[serde(default)]
    pub reps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismKind {
    SecondPrice { reserve: f64 },
    RandomRepaired,
}

/// Latent-space mechanism experiment: `F_z` is a certified perturbation of
/// the model prior and `M~` is audited against it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub valuation: ValuationFamily,
    pub items: usize,
    pub bundle: Bundle,
    pub base: MechanismKind,
    /// Atoms per bidder prior.
    pub support_size: usize,
    /// Prior atoms lie on `{0, 1/grid, ..., 1}^k`.
    pub grid: usize,
    /// Defaults to the recovery bound, floored at `eps_mdl`.
    #[serde(default)]
    pub zeta: Option<f64>,
    /// Defaults to `sqrt(zeta)`.
    #[serde(default)]
    pub delta: Option<f64>,
}

impl MechanismSpec {
    pub fn valuation_spec(&self) -> ValuationSpec {
        match self.valuation {
            ValuationFamily::Additive => ValuationSpec::additive(self.items),
            ValuationFamily::Table => ValuationSpec::table(self.items),
        }
    }
}

/// Which acceptance checks decide the CLI exit code.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertions {
    #[serde(default)]
    pub min_recovery_rate: Option<f64>,
    #[serde(default)]
    pub max_failed: Option<usize>,
    #[serde(default)]
    pub ir_exact: bool,
    #[serde(default)]
    pub bic_within_bounds: bool,
    #[serde(default)]
    pub revenue_within_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub p: NormIndex,
    pub family: ArchetypeFamily,
    /// One design matrix for all trials instead of one per trial.
    #[serde(default)]
    pub fixed_design: bool,
    pub eps_mdl: f64,
    #[serde(default)]
    pub eps_nq: f64,
    #[serde(default)]
    pub query_family: QueryFamily,
    /// Failure probability of the recovery protocol.
    pub delta: f64,
    pub seed: u64,
    pub trials: usize,
    #[serde(default)]
    pub recovery: Option<RecoverySpec>,
    #[serde(default)]
    pub mechanism: Option<MechanismSpec>,
    #[serde(default)]
    pub assertions: Assertions,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.k == 0 || self.d < self.k {
            return bad(format!("need d >= k >= 1, got d = {}, k = {}", self.d, self.k));
        }
        if self.n == 0 || self.trials == 0 {
            return bad("n and trials must be positive".into());
        }
        if !(self.eps_mdl >= 0.0 && self.eps_nq >= 0.0) {
            return bad("noise levels must be nonnegative".into());
        }
        if self.query_family == QueryFamily::Value && self.eps_nq != 0.0 {
            return bad("value queries are exact: eps_nq must be 0".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        if self.recovery.is_none() && self.mechanism.is_none() {
            return bad("enable recovery, mechanism or both".into());
        }
        if let Some(m) = &self.mechanism {
            let spec = m.valuation_spec();
            if spec.type_dim() != self.d {
                return bad(format!("valuation needs d = {}, got {}", spec.type_dim(), self.d));
            }
            if m.bundle == 0 || m.bundle as usize > (1usize << m.items) - 1 {
                return bad(format!("bundle {} is not a nonempty subset", m.bundle));
            }
            if m.support_size == 0 || m.grid == 0 {
                return bad("support_size and grid must be positive".into());
            }
            if let Some(z) = m.zeta {
                if !(0.0..1.0).contains(&z) {
                    return bad(format!("zeta = {z} must lie in [0, 1)"));
                }
            }
            if let Some(dl) = m.delta {
                if !(dl > 0.0) {
                    return bad("delta must be positive".into());
                }
            }
        }
        Ok(())
    }
}
