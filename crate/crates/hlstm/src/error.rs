use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A gradient contained NaN or infinity; the update was aborted.
    #[error("non-finite gradient for {0}")]
    NonFinite(String),
    /// A checkpoint file could not be decoded.
    #[error("checkpoint parse error in section {section}: {reason}")]
    Parse {
        section: &'static str,
        reason: String,
    },
    /// A run configuration failed validation.
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
