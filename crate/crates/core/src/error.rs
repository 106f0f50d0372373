use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is singular to working precision: pivot {pivot:e} at column {column} (bound {bound:e})")]
    Singular { pivot: f64, column: usize, bound: f64 },

    #[error("covariance accumulator has no samples")]
    EmptyStatistics,

    #[error("degenerate key: k*^T C^-1 k* = {0:e} (key annihilated by C^-1)")]
    DegenerateKey(f64),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    Bounds {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("conflicting interventions at {0}")]
    ConflictingPatch(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("optimization failed after {} steps: {message}", trajectory.len())]
    Optimization {
        message: String,
        trajectory: Vec<f64>,
    },

    #[error("infeasible world configuration: {0}")]
    Infeasible(String),

    #[error("not enough neighborhood prompts for {subject:?}: need {needed}, found {found}")]
    InsufficientNeighborhood {
        subject: String,
        needed: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
