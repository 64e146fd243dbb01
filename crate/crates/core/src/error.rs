use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments: out-of-range indices, invalid temperatures, shape mismatches.
    #[error("usage error: {0}")]
    Usage(String),

    /// A model or spec that violates a structural invariant.
    #[error("invalid model: {0}")]
    Validation(String),

    /// Exhaustive enumeration would exceed the configured joint-state cap.
    #[error("capacity exceeded: {states} joint states > cap {cap}")]
    Capacity { states: u128, cap: u128 },

    /// Every joint assignment has energy `-inf`.
    #[error("degenerate model: every assignment has energy -inf")]
    Degenerate,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Capacity { .. } => 4,
            _ => 2,
        }
    }
}
