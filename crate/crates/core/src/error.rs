use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or shape mismatch between operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input values outside the operation's domain (NaN, infinities, empty).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A scalar parameter outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Inconsistent model or detector configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A detector could not be fitted on the provided data.
    #[error("fit error: {0}")]
    Fit(String),

    /// Voting preconditions violated (missing channel, ineligible channel).
    #[error("voter error: {0}")]
    Voter(String),

    /// Evaluation-time contract violation (counting identities, uncalibrated detector).
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
