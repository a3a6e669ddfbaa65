//! Latent-type elicitation and mechanism robustification.
//!
//! Bidder types live in a high dimensional space but are well approximated
//! by combinations of a few archetypes (the columns of a design matrix `A`).
//! This crate recovers the latent coefficients from a handful of entry
//! queries using row-sampled lp regression, and turns a mechanism designed
//! for a low dimensional prior into one that stays approximately incentive
//! compatible under a nearby true distribution. Exact auditors check every
//! bound on small instances.

pub mod dist;
pub mod error;
pub mod harness;
pub mod io;
pub mod lad;
pub mod lp;
pub mod matrix;
pub mod mechanism;
pub mod norm;
pub mod protocol;
pub mod regression;
pub mod scores;
pub mod sketch;

pub use error::{Error, Result};
pub use matrix::Mat;
pub use norm::NormIndex;
