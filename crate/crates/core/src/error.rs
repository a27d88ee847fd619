use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fusion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("corrupt data in {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("index {index} out of range for {len} samples")]
    Range { index: usize, len: usize },

    #[error("invalid temporal partition: {0}")]
    Partition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("axis {axis} is invalid for a rank-{rank} tensor")]
    Axis { axis: usize, rank: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
