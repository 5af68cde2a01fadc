use thiserror::Error;

/// Errors surfaced by the environment, policy, sampling, and estimator layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("enumeration infeasible: {paths} paths exceed cap {cap}")]
    EnumerationInfeasible { paths: u64, cap: u64 },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("trajectory is incomplete")]
    IncompleteTrajectory,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("group too small: need at least {need} rollouts, got {got}")]
    GroupTooSmall { need: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
