use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents that cannot be combined (matmul inner dims, channels, broadcasting).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Extents that violate an operation's shape contract (odd sizes, non-integer output extents).
    #[error("shape error: {0}")]
    Shape(String),

    /// NaN/Inf encountered where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unknown wavelet {name:?}; valid names: {valid}")]
    Registry { name: String, valid: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    /// A caller broke an API precondition (e.g. backward from a non-scalar node).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
