use thiserror::Error;

/// Error type shared by every module in the crate.
///
/// The variants map onto the CLI exit codes: `Config` and `Usage` are
/// caller mistakes (exit 1), the rest are runtime failures (exit 2).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad hyperparameter, incompatible shapes in a model spec, ...).
    #[error("config error: {0}")]
    Config(String),
    /// An operation was called outside its contract (empty accumulator, mismatched lengths, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// A NaN or infinity showed up where the kernel requires finite values.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A file did not match its expected binary or text format.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
