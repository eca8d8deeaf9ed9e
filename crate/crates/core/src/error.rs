use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (e.g. `h <= 0`).
    #[error("domain error: {0}")]
    Domain(String),
    /// A configuration value violates a documented constraint.
    #[error("config error: {0}")]
    Config(String),
    /// Two objects that must agree in shape or scale do not.
    #[error("mismatch: {0}")]
    Mismatch(String),
    /// A fit or estimate could not be formed from the available data.
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
