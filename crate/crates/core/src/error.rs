use std::path::PathBuf;

use stackdet_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but does not match its documented layout.
    #[error("format error in {context}: {detail}")]
    Format { context: String, detail: String },

    /// Well-formed input whose content violates a data rule.
    #[error("data error: {0}")]
    Data(String),

    #[error("fold validation failed with {} violation(s): {}", .0.len(), .0.join("; "))]
    Validation(Vec<String>),

    #[error("unknown object id {0:?}")]
    UnknownObject(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("transfer error: {0}")]
    Transfer(String),
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }

    pub(crate) fn format(context: impl Into<String>, detail: impl Into<String>) -> Self {
        CoreError::Format { context: context.into(), detail: detail.into() }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
