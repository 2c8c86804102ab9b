use thiserror::Error;

/// Errors produced by the training library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A non-finite value appeared while evaluating `layer`.
    #[error("non-finite value in {layer}: {detail}")]
    Numeric { layer: String, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A stability invariant that must hold on every run was violated.
    #[error("invariant breach: {0}")]
    InvariantBreach(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numeric(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            layer: layer.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
