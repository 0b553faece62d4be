use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },

    #[error("index {index} out of range for {context} of length {len}")]
    IndexOutOfRange { context: &'static str, index: usize, len: usize },

    #[error("invalid market: {0}")]
    InvalidMarket(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("buyer {buyer} has zero utility")]
    ZeroUtility { buyer: usize },

    #[error("instance size {size} exceeds the desk-scale limit {limit}")]
    ScaleLimit { size: usize, limit: usize },

    #[error("rank {rank} outside 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("{kind} cluster {cluster} is empty")]
    EmptyCluster { kind: &'static str, cluster: usize },

    #[error("not an equilibrium of the abstract market: {0}")]
    NotAnAbstractEquilibrium(String),

    #[error(
        "bound hypothesis violated for buyer {buyer}: abstract utility {value:e} of the true optimum is not positive"
    )]
    HypothesisViolated { buyer: usize, value: f64 },

    #[error("linear program is infeasible")]
    LpInfeasible,

    #[error("linear program is unbounded")]
    LpUnbounded,

    #[error("linear program hit the pivot limit")]
    LpIterationLimit,

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("value {value} at row {row}, column {column} is negative after shifting")]
    NegativeValueAfterShift { row: usize, column: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
