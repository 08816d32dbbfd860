use thiserror::Error;

/// Error type shared across the crate.
///
/// The variants map onto distinct failure classes so callers (and the CLI)
/// can react differently to I/O problems, malformed files, violated
/// invariants, and numeric blow-ups.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed container or text file: bad magic, unsupported version,
    /// truncation, unparsable syntax.
    #[error("format error: {0}")]
    Format(String),

    /// An invariant of a domain object is violated (index out of range,
    /// value out of range, inconsistent state).
    #[error("validation error: {0}")]
    Validation(String),

    /// Array or parameter dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
