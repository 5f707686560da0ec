use thiserror::Error;

/// Errors raised by the solvers, the trainer and the configuration layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("bracket expansion exceeded {limit} while maximizing (pathological curve)")]
    BracketFailure { limit: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid with {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: usize, limit: usize },

    #[error("state {0:?} outside the active risk limits")]
    StateOutOfBounds(Vec<i32>),

    #[error("markov chain has {} closed classes; stationary distribution is not unique", .classes.len())]
    ReducibleChain { classes: Vec<Vec<usize>> },

    #[error("newton solve did not converge (stage {stage}, residual {residual:e})")]
    NewtonFailure { stage: usize, residual: f64 },

    #[error("interpolation table error {error:e} exceeds tolerance {tol:e}")]
    InterpolationError { error: f64, tol: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown bond id {0}")]
    UnknownBond(String),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::ProbabilityOutOfRange(_) => "probability_out_of_range",
            Error::BracketFailure { .. } => "bracket_failure",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::GridTooLarge { .. } => "grid_too_large",
            Error::StateOutOfBounds(_) => "state_out_of_bounds",
            Error::ReducibleChain { .. } => "reducible_chain",
            Error::NewtonFailure { .. } => "newton_failure",
            Error::InterpolationError { .. } => "interpolation_error",
            Error::Empty(_) => "empty",
            Error::UnknownBond(_) => "unknown_bond",
            Error::Unknown { .. } => "unknown",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
