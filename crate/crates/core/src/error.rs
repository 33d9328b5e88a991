use thiserror::Error;

/// Errors raised anywhere in the nowcasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions or invalid options.
    #[error("configuration error: {0}")]
    Config(String),
    /// The innovation variance became numerically singular.
    #[error("filter degeneracy at t={t}: {reason}")]
    FilterDegenerate { t: usize, reason: String },
    /// Invalid input data (named row/column where possible).
    #[error("data error: {0}")]
    Data(String),
    /// Hyperparameters outside their admissible region.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// Factor or regression estimation failed.
    #[error("estimation error: {0}")]
    Estimation(String),
    /// Numerical optimizer failure.
    #[error("optimization error: {0}")]
    Optimization(String),
    /// A statistical test could not be computed.
    #[error("test error: {0}")]
    Test(String),
    #[error("index error: {0}")]
    Index(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
