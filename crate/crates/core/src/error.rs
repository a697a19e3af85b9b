use thiserror::Error;

/// Errors raised by model construction and the filter updates.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A model, kernel or belief was built from inconsistent parts.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was called with inputs that violate its contract.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A factorisation failed even after regularisation.
    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: &'static str, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
