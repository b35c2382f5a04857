use thiserror::Error;

/// Errors raised by the detection engine and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical conditioning failure: {0}")]
    Conditioning(String),

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Conditioning(_) | Error::EstimationFailed(_) | Error::CalibrationFailed(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
