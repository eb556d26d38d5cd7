use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector did not have the length the billing cycle requires.
    #[error("input shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    /// A numeric argument lies outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The request is well formed but exceeds what a solver accepts
    /// (enumeration guards, invariant violations).
    #[error("solver guard: {0}")]
    Guard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by bad user input rather than solver limits or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::Domain(_)
                | Error::Invalid(_)
                | Error::Parse { .. }
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub(crate) fn check_len(got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Shape { expected, got });
    }
    Ok(())
}
