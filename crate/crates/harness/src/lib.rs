//! Experiment runner, statistics and reporting for `pfa-core`.

pub mod experiment;
pub mod gradcheck;
pub mod report;
pub mod stats;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] pfa_core::PfaError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("statistics: {0}")]
    Stats(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
