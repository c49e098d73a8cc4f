//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (bad magic, version, dtype, truncation).
    #[error("format error: {0}")]
    Format(String),

    /// Dimension or channel-count mismatch between operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// Arguments outside their documented domain.
    #[error("validation error: {0}")]
    Validation(String),

    /// Input that makes the requested operation meaningless (e.g. a
    /// constant volume passed to percentile normalization).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Synthetic data generation could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),
}
