use thiserror::Error;

/// Errors raised by the simulator and its configuration layer.
#[derive(Debug, Error)]
pub enum StfeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field has {got} values, grid has {expected} cells")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("mode k = {k} is not resolved on a grid with N = {n} cells (need 2|k| < N/2)")]
    ModeBeyondNyquist { k: i64, n: usize },

    /// A modelling hypothesis is violated; `hypothesis` carries the label, e.g. `(H3)`.
    #[error("{hypothesis} violated: {message}")]
    Hypothesis {
        hypothesis: &'static str,
        message: String,
    },

    #[error("nonpositive film height {0} where a strictly positive value is required")]
    NonPositive(f64),

    #[error("negative film height {0}")]
    Negative(f64),

    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),

    #[error("linear system is singular to working precision")]
    Singular,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("every sample in the ensemble failed")]
    AllSamplesFailed,

    #[error("malformed snapshot file: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StfeError>;
