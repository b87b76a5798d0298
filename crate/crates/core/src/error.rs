use thiserror::Error;

/// Crate-wide error type. Every fallible public operation returns one of
/// these; the CLI maps variants onto distinct exit codes.
#[derive(Debug, Error)]
pub enum SailError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid input for {op}: {detail}")]
    InvalidInput { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SailError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        SailError::Shape { op, detail: detail.into() }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        SailError::InvalidInput { op, detail: detail.into() }
    }

    pub fn non_finite(op: impl Into<String>) -> Self {
        SailError::NonFinite { op: op.into() }
    }
}

pub type Result<T> = std::result::Result<T, SailError>;
