use thiserror::Error;

/// Error type shared by every pipeline stage.
#[derive(Debug, Error)]
pub enum CcgError {
    /// Caller violated a documented precondition (dimension mismatch,
    /// out-of-range parameter, empty input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced non-finite values or diverged.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file did not match its expected format. The detail names the
    /// offending offset where one is known.
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CcgError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CcgError::InvalidArgument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CcgError::Numeric(msg.into())
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        CcgError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CcgError>;
