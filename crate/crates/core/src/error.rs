use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{path}: line {line}: {message}")]
    Csv {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: String, column: String },

    #[error(
        "rejection sampling exceeded {budget} draws for component mean={mean}, spread={spread}"
    )]
    RejectionBudget {
        budget: usize,
        mean: f64,
        spread: f64,
    },

    #[error("feedback requested on round {round} but the sample was not offloaded")]
    MissingFeedback { round: usize },

    #[error("policy contract violation at round {round}: {message}")]
    ContractViolation { round: usize, message: String },

    #[error("trace and offline optimum were computed on different data (fingerprints {trace:#018x} vs {optimum:#018x})")]
    MismatchedDataset { trace: u64, optimum: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from input data rather than configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyDataset
                | Error::Csv { .. }
                | Error::MissingColumn { .. }
                | Error::RejectionBudget { .. }
                | Error::MismatchedDataset { .. }
                | Error::Io { .. }
        )
    }
}
