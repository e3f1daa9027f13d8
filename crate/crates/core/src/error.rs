//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A configuration object failed validation.
    #[error("config error: {0}")]
    Config(String),
    /// A numerical routine could not complete (non-SPD matrix, NaN, ...).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A regression/fit had too little usable data.
    #[error("fit error: {0}")]
    Fit(String),
    /// A curve-feature extraction failed (e.g. level never bracketed).
    #[error("extraction error: {0}")]
    Extraction(String),
}

pub type Result<T> = std::result::Result<T, Error>;
