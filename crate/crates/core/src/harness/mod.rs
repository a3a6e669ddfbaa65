//! Scenario generation and end-to-end experiments.

mod experiment;
mod generate;
mod scenario;

pub use experiment::{
    run_experiment, run_trial, Aggregate, AssertionOutcome, ExperimentReport, MechanismRecord, RecoveryRecord,
    TrialRecord,
};
pub use generate::{gen_archetypes, gen_dhat, gen_perturbed_dist, trial_rng, ArchetypeFamily, PerturbedDist};
pub use scenario::{Assertions, MechanismKind, MechanismSpec, QueryFamily, RecoverySpec, ScenarioConfig};
