use thiserror::Error;

/// Errors raised by the simulator and its analysis chain.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrapError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Position outside the region where a quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Time outside a schedule's domain.
    #[error("range error: {0}")]
    Range(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("normalization error: {0}")]
    Normalization(String),
}

pub type Result<T, E = TrapError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> TrapError {
    TrapError::InvalidArgument(msg.into())
}
