use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the models, modems and optimizers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A configuration value violates its invariant.
    #[error("config error: {0}")]
    Config(String),
    /// A buffer is shorter than the operation needs, or two lengths disagree.
    #[error("length error: {0}")]
    Length(String),
    /// Loop gain at unity or losses fully cancelled.
    #[error("oscillation: {0}")]
    Oscillation(String),
    /// No usable timing reference found in the received envelope.
    #[error("sync error: {0}")]
    Sync(String),
    /// Objective returned a non-finite value.
    #[error("objective evaluation returned {value} at {point:?}")]
    Evaluation { point: Vec<f64>, value: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn length(msg: impl Into<String>) -> Error {
    Error::Length(msg.into())
}
