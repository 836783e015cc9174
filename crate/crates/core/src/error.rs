use thiserror::Error;

/// Errors raised by the stochastic kernels, the automaton engine, the oracles and the learner.
#[derive(Debug, Error)]
pub enum PfaError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid probability data: {0}")]
    InvalidProbability(String),

    #[error("unknown symbol '{0}'")]
    UnknownSymbol(char),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("closure mode {mode} cannot be used with {reason}")]
    ClosureModeMismatch { mode: &'static str, reason: String },

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("tape does not match model: {0}")]
    TapeMismatch(String),

    #[error("malformed document: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PfaError>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(PfaError::DimensionMismatch { expected, found })
    }
}
