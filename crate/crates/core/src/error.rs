use thiserror::Error;

/// Errors raised by the verification engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the open natural-parameter domain of its family.
    #[error("{family}: parameter {value} outside natural domain at coordinate {coord}")]
    Domain {
        family: &'static str,
        coord: usize,
        value: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension {dim} exceeds the corner cap of {cap}")]
    UnsupportedDimension { dim: usize, cap: usize },

    #[error("draw stream exhausted before the trial finished")]
    StreamExhausted,

    #[error("{0} did not converge")]
    Convergence(&'static str),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("surface: {0}")]
    Surface(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
