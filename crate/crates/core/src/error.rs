//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by model validation, numerical solvers, and experiments.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A simulation or solver produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An observable was evaluated outside the domain of its outer map.
    #[error("observable domain violation: {0}")]
    Domain(String),

    /// A requested quantity does not exist (for example a hitting level that
    /// the limit curve never reaches).
    #[error("unavailable: {0}")]
    Unavailable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
