use thiserror::Error;

/// Errors produced by the numerical core, the synthetic tasks and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("group order must be positive")]
    ZeroOrder,
    #[error("group order mismatch: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("quotient divisor {k} does not divide group order {n}")]
    BadDivisor { n: usize, k: usize },
    #[error("field is not square ({height}x{width})")]
    NotSquare { height: usize, width: usize },
    #[error("rotation by {index}/{n} of a turn is not a multiple of a quarter turn")]
    NotQuarterTurn { n: usize, index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported layer type pair: {0}")]
    UnsupportedTypes(String),
    #[error("invalid network: {0}")]
    Network(String),
    #[error("forward cache does not belong to this network")]
    CacheMismatch,
    #[error("label out of bounds: {0}")]
    Label(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
