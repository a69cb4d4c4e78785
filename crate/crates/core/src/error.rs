use std::path::PathBuf;

/// Errors raised by the propagation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid band limit: {0}")]
    InvalidBandLimit(String),

    #[error("band limit l0={l0}, n0={n0} needs {points} grid points, above the ceiling of {ceiling}")]
    MemoryCeiling {
        l0: usize,
        n0: usize,
        points: usize,
        ceiling: usize,
    },

    #[error("dimension mismatch: expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("derivative axis {0} out of range (expected 1..=5)")]
    AxisOutOfRange(usize),

    #[error("non-finite value encountered at step {step}: {context}")]
    NonFinite { step: usize, context: String },

    #[error("total probability drifted by {drift:e} in one step (threshold {threshold:e})")]
    ProbabilityDrift { drift: f64, threshold: f64 },

    #[error("dt * max rate = {product} must be below 1 for the forward Euler jump step (dt={dt}, max rate={max_rate})")]
    JumpStepTooLarge { dt: f64, max_rate: f64, product: f64 },

    #[error("model returned a negative {what} ({value}) at {location}")]
    NegativeModelValue {
        what: &'static str,
        value: f64,
        location: String,
    },

    #[error("initial probability {total} deviates from 1 by more than {tolerance:e}")]
    InitialProbability { total: f64, tolerance: f64 },

    #[error("timestamp mismatch at row {index}: {a} vs {b}")]
    TimestampMismatch { index: usize, a: f64, b: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("config file not found: {}", .0.display())]
    ConfigNotFound(PathBuf),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
