use thiserror::Error;

/// Errors raised by the numerical kernels and the workflows built on them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("point {xi} outside the domain [0, {length}]")]
    Domain { xi: f64, length: f64 },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("kernel discretization failed: {0}")]
    Kernel(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite state after step {step} ({scheme} scheme)")]
    Overflow { step: usize, scheme: String },
    #[error("order fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
