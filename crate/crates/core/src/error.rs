use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes, divisibility violations, bad kernel sizes.
    #[error("configuration error: {0}")]
    Config(String),
    /// A phase of the simulated cluster was driven out of order or a worker
    /// is missing data it should have received.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Dataset or parameter-file ingestion failed.
    #[error("ingestion error: {0}")]
    Ingest(String),
    /// Malformed serialized data (bad magic, truncated record, bad CSV).
    #[error("format error: {0}")]
    Format(String),
    /// Training hit a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Divergence { epoch: usize, step: usize },
    /// A numeric check ran into NaN/Inf; the message names the coordinate.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
