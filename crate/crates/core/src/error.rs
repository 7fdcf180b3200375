use thiserror::Error;

/// Errors produced by estimation, hypothesis construction and the test engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A column with zero sample variance. `column` is 1-based.
    #[error("degenerate data: column {column} has zero sample variance")]
    ZeroVariance { column: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate hypothesis: {0}")]
    DegenerateHypothesis(String),

    #[error("Fisher z transform undefined: {0}")]
    TransformDomain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
