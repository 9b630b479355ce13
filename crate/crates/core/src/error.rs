use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed configuration: divisibility, sizes, non-positive parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Two operands live on different grids, partitions, or weight sets.
    #[error("discretization mismatch: {0}")]
    Mismatch(String),

    /// The squared frequency lies inside a band that may contain a Dirichlet
    /// eigenvalue of the operator for some admissible coefficient.
    #[error(
        "omega^2 = {omega2} is inadmissible: it lies in the forbidden band \
         [lambda_{n}/B2, lambda_{n}/B1] = [{lo}, {hi}]"
    )]
    Inadmissible { omega2: f64, n: usize, lo: f64, hi: f64 },

    #[error("coefficient {index} = {value} lies outside the bounds [{lo}, {hi}]")]
    OutOfBounds { index: usize, value: f64, lo: f64, hi: f64 },

    #[error("near eigenfrequency: smallest pivot magnitude {min_pivot:e} (largest {max_pivot:e})")]
    NearEigenfrequency { min_pivot: f64, max_pivot: f64 },

    #[error("linear solve residual {residual:e} exceeds tolerance")]
    SolverAccuracy { residual: f64 },

    #[error("level inadmissible: 8*ctilde*eta = {value} > 1")]
    LevelInadmissible { value: f64 },

    /// A level transition violates the refinement conditions.
    #[error("level transition refused: {0}")]
    TransitionRefused(String),

    #[error("overflow evaluating the stability constant: {0}")]
    Overflow(String),

    #[error("invalid compression model: {0}")]
    InvalidModel(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
