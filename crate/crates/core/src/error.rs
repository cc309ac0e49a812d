use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("dimension index {index} out of range ({count} dimensions)")]
    DimensionOutOfRange { index: usize, count: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("preference vector has zero norm")]
    ZeroNormPreference,

    #[error("no profile dimension has a nonzero preference; objective is undefined")]
    NoIncludedDimensions,

    #[error("infeasible list size k = {k} for {m} candidates")]
    InfeasibleK { k: usize, m: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("candidate set for `{user}` is invalid: {reason}")]
    InvalidCandidates { user: String, reason: String },

    #[error("kernel is not positive semidefinite after ridging (pivot {pivot} = {value:e})")]
    NonPsdKernel { pivot: usize, value: f64 },

    #[error("exhaustive search over C({m}, {k}) = {count} subsets exceeds the budget of {budget}")]
    BudgetExceeded { m: usize, k: usize, count: u128, budget: u64 },

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{} references unknown ids: {}", path.display(), ids.join(", "))]
    DanglingIds { path: PathBuf, ids: Vec<String> },

    #[error("mismatched user sets: {0}")]
    MismatchedUsers(String),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
