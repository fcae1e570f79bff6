use alloc::string::String;

/// Errors raised by the training, accounting and analysis routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("non-finite per-sample gradient at step {step} (sample {sample})")]
    NonFiniteGradient { step: usize, sample: usize },
    #[error("parameters became non-finite at step {step}")]
    NonFiniteParameters { step: usize },
    #[error("privacy loss is unbounded: noise multiplier is 0 with sampling rate {q}")]
    UnboundedPrivacy { q: f64 },
    #[error("RDP order grid is empty")]
    EmptyGrid,
    #[error("target epsilon {target} is below the zero-step floor {floor}")]
    BudgetBelowFloor { target: f64, floor: f64 },
    #[error("shard {index} of the teacher partition is empty")]
    EmptyShard { index: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
