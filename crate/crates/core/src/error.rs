use thiserror::Error;

/// Errors raised by the simulation, sampling and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite state at t = {time}; the step size is probably too large")]
    NonFinite { time: f64 },

    #[error("bond sum {sum:e} violates the fixed-end constraint (tolerance {tolerance:e})")]
    ConstraintViolated { sum: f64, tolerance: f64 },

    #[error("profile is not admissible: {0}")]
    Inadmissible(String),

    #[error("vanishing denominator {denominator:e} for triple ({k1}, {k2}, {k3})")]
    SmallDenominator {
        k1: usize,
        k2: usize,
        k3: usize,
        denominator: f64,
    },

    #[error("imaginary residue {imag:e} of the corrector exceeds tolerance (real part {real:e})")]
    ImaginaryResidue { real: f64, imag: f64 },

    #[error("no sign change of the tilted mean in [{lo}, {hi}]")]
    Bracketing { lo: f64, hi: f64 },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
