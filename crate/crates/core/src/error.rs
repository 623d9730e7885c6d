use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("matrix is not positive definite in {0}")]
    NotPositiveDefinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported smoothness nu={0} (supported: 0.5, 1.5)")]
    UnsupportedSmoothness(f64),

    #[error("inference failure at iteration {iteration}, mode {mode}: {reason}")]
    Inference {
        iteration: usize,
        mode: usize,
        reason: String,
    },

    #[error("malformed data at line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}
