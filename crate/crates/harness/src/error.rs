use std::path::PathBuf;

/// Failures of the experiment driver. Validation problems map to exit code 1,
/// everything else to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg} at byte offset {offset}")]
    Idx { path: PathBuf, offset: usize, msg: String },
    #[error(transparent)]
    Core(#[from] dplis_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("some seeds failed, partial results were written: {0}")]
    PartialFailure(String),
    #[error("{path}: stored epsilon {stored} differs from recomputed {recomputed}")]
    SpendMismatch { path: PathBuf, stored: f64, recomputed: f64 },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } | HarnessError::Invalid(_) => 1,
            HarnessError::Core(dplis_core::Error::InvalidParameter(_)) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
