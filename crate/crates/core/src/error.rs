use std::io;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Arguments violate a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A file or byte buffer does not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A scenario cannot be realised with the data at hand (e.g. a deceiving
    /// server without spare samples to substitute).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Shadow-model calibration produced a non-positive unlearning measurement.
    #[error("calibration failure: {0}")]
    Calibration(String),

    /// Every trial of a benchmark was skipped.
    #[error("empty report: all {0} trials were skipped")]
    EmptyReport(usize),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}
