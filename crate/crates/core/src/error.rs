//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented precondition.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A noise-table access would run past the end of the table.
    #[error("noise slice out of range: offset {offset} + dim {dim} > table length {len}")]
    NoiseOutOfRange { offset: u64, dim: usize, len: usize },

    /// Two components disagree on the parameter dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A numeric value is NaN or infinite where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An action index is outside the environment's action set.
    #[error("action {action} out of range for {actions} actions")]
    ActionOutOfRange { action: usize, actions: usize },

    /// A serialized artifact (checkpoint, wire message, golden file) is
    /// malformed or has an unsupported version.
    #[error("decode error: {0}")]
    Decode(String),

    /// A peer speaks an incompatible protocol or run setup.
    #[error("handshake rejected: {0}")]
    Handshake(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Catch-all for runtime failures that should abort the run.
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Error::Runtime(msg.into())
    }

    pub fn decode(msg: impl Into<String>) -> Self {
        Error::Decode(msg.into())
    }
}
