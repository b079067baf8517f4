use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid distance matrix: {0}")]
    InvalidDistance(String),

    #[error("mass mismatch: source mass {source_mass}, target mass {target_mass}")]
    MassMismatch { source_mass: f64, target_mass: f64 },

    #[error("middle marginal mismatch at point {index}: {left} vs {right}")]
    MarginalMismatch { index: usize, left: f64, right: f64 },

    #[error("crossed certificate bounds: lower {lower} > upper {upper}")]
    CrossedBounds { lower: f64, upper: f64 },

    #[error("positivity loss at step {step} (s = {s}): min value {min_value}, bound {bound}")]
    PositivityLoss { step: usize, s: f64, min_value: f64, bound: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
