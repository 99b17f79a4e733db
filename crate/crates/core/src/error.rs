use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("subset mask {bits:#b} has bits outside a base set of size {p}")]
    InvalidSubset { bits: u64, p: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("base set of size {p} exceeds the brute-force limit of {limit}")]
    TooLarge { p: usize, limit: usize },

    #[error("set function is not normalized: l(empty) = {0}")]
    NotNormalized(f64),

    #[error("set function is not submodular")]
    NotSubmodular,

    #[error("set function is not increasing")]
    NotIncreasing,

    #[error("invalid label {0}: labels must be -1 or +1")]
    InvalidLabel(i64),

    #[error("invalid loss parameters: {0}")]
    InvalidLoss(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty constraint set")]
    EmptyConstraints,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
