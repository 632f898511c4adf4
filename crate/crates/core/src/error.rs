use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty distribution")]
    EmptyDistribution,

    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("improper score: {0}")]
    ImproperScore(String),

    #[error("horizon exceeded: all {0} rounds already played")]
    HorizonExceeded(usize),

    #[error("length mismatch: {predictions} predictions but {states} states")]
    LengthMismatch { predictions: usize, states: usize },

    #[error("non-integral state counts for T={requested}, eps={epsilon}; smallest compatible T >= {requested} is {smallest}")]
    IncompatibleHorizon {
        requested: usize,
        epsilon: f64,
        smallest: String,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
