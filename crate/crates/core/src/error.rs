use thiserror::Error;

use crate::losses::LossBreakdown;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation received inputs whose shapes break its contract.
    #[error("shape contract violated in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cosine similarity of a zero-norm vector")]
    ZeroNorm,

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("non-finite loss at iteration {iteration}: {breakdown:?}")]
    Diverged {
        iteration: usize,
        breakdown: LossBreakdown,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }
}
