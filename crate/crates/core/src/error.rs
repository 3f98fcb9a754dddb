use thiserror::Error;

/// Errors raised by graph construction, tensor operations and model layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A graph violates a structural invariant (dangling endpoint, bad node id, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// Input data is malformed (ragged rows, unparsable corpus line, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Operand shapes are incompatible.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// A computation produced or would produce a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;
