//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: config errors exit 1, protocol and
/// frame errors exit 2, everything else exits 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Model structure problems: shape mismatches, bad layer hyperparameters.
    #[error("architecture error: {0}")]
    Architecture(String),

    /// Parameter vectors or digests that do not match any registered model.
    #[error("incompatible architecture: {0}")]
    IncompatibleArch(String),

    /// Invalid data fed to an operation (non-finite values, bad labels).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// Federated round protocol violations.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Malformed dataset file, with the byte offset of the first problem.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    /// Malformed wire frame.
    #[error(transparent)]
    Frame(#[from] crate::transport::DecodeError),

    /// Simulation in an invalid state (e.g. robot pose inside an obstacle).
    #[error("state error: {0}")]
    State(String),

    /// Waypoint could not be reached on the known map.
    #[error("navigation error: {0}")]
    Navigation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 1,
            Error::Protocol(_) | Error::Frame(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
