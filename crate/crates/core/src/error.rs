use thiserror::Error;

/// Errors raised anywhere in the line-narrowing pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("shape mismatch: expected length {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("kernel transform underflow at index {index} (|H| = {magnitude:e})")]
    KernelUnderflow { index: usize, magnitude: f64 },

    #[error("degenerate signal: {0}")]
    Degenerate(String),

    #[error("prediction order {order} invalid for {samples} samples")]
    Order { order: usize, samples: usize },

    #[error("truncation length {m} must be below signal length {k}")]
    Truncation { m: usize, k: usize },

    #[error("weights are not normalized (sum = {0})")]
    Normalization(f64),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("matrix is not positive definite even with jitter {0:e}")]
    Conditioning(f64),

    #[error("insufficient replicates: need at least {needed}, got {got}")]
    InsufficientReplicates { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
