//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by the aggregation protocol, its baselines and the harness.
#[derive(Debug, Error)]
pub enum DsflError {
    /// A precondition on an argument was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two collections or vectors that must agree in length do not.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    /// Fewer active participants than the aggregation threshold `k`.
    #[error("under quorum: {active} active participants, {needed} required")]
    UnderQuorum { needed: usize, active: usize },

    /// A configuration file or override could not be interpreted.
    #[error("config error{}: `{key}`: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        line: Option<usize>,
        key: String,
        msg: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DsflError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DsflError::InvalidInput(msg.into())
    }

    pub(crate) fn config(line: Option<usize>, key: impl Into<String>, msg: impl Into<String>) -> Self {
        DsflError::Config {
            line,
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by a bad configuration rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, DsflError::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, DsflError>;
