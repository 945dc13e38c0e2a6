//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failures surfaced by the solver and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A simulated quantity became non-finite. Carries the randomness key
    /// path that produced it so the sample can be replayed in isolation.
    #[error("non-finite value in {what} at randomness path {path:?}")]
    NonFinite { what: &'static str, path: Vec<i64> },

    /// Projected work exceeds a guard; overridable where documented.
    #[error("refused: {0}")]
    Refused(String),

    /// Configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    /// Result files could not be written.
    #[error("output error: {0}")]
    Output(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand for a domain error.
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
