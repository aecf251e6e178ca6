use thiserror::Error;

use crate::model::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("measurement gap: no usable covariance for pair ({0}, {1})")]
    MeasurementGap(NodeId, NodeId),

    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("log line {line}: {msg}")]
    Log { line: usize, msg: String },

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the `tomo` binary: 2 config, 3 data, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Internal(_) => 4,
            _ => 3,
        }
    }
}
