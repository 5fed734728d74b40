use thiserror::Error;

use crate::glm::GlmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error("outcome mean is not positive ({0}); the index is undefined")]
    DegenerateOutcome(f64),
    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("row mismatch: {0} vs {1} observations")]
    RowMismatch(usize, usize),
    #[error("{failed} of {total} replicates failed (limit 1%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Glm(_) => "glm",
            Error::DegenerateOutcome(_) => "degenerate-outcome",
            Error::NumericDegeneracy(_) => "numeric-degeneracy",
            Error::InvalidData(_) => "invalid-data",
            Error::InvalidConfig(_) => "invalid-config",
            Error::RowMismatch(..) => "row-mismatch",
            Error::TooManyFailures { .. } => "too-many-failures",
            Error::Input { .. } => "input",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
