use std::path::PathBuf;

/// Errors raised by the segmentation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("invalid record `{record}`, field `{field}`: {reason}")]
    Validation {
        record: String,
        field: String,
        reason: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn invalid(record: &str, field: &str, reason: impl Into<String>) -> Error {
    Error::Validation {
        record: record.to_string(),
        field: field.to_string(),
        reason: reason.into(),
    }
}
