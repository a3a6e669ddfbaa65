use thiserror::Error;

use crate::scores::ScoreVector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is rank deficient (numerical rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("fixed-point iteration did not converge (residual {residual:e})")]
    NoConvergence {
        residual: f64,
        approx: Option<Box<ScoreVector>>,
    },
    #[error("bad probability vector: {0}")]
    BadProbabilities(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("design matrix is singular in the requested norm")]
    SingularDesign,
    #[error("no support point in the requested cube")]
    EmptyCube,
    #[error("instance too large: {size} exceeds cap {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("bid is not a support point of the mechanism table")]
    NotInSupport,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
