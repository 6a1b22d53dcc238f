use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid channel spec: {0}")]
    InvalidSpec(String),

    #[error("path collision: could not place {paths} paths on distinct grid cells after {attempts} attempts")]
    PathCollision { paths: usize, attempts: usize },

    #[error("duplicate grid cell (delay {delay}, doppler {doppler})")]
    DuplicateCell { delay: usize, doppler: i64 },

    #[error("index out of grid bounds: {0}")]
    OutOfBounds(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dense operator needs {needed} complex entries, budget is {budget}; use matrix-free mode")]
    MemoryBudget { needed: usize, budget: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("truth vector has zero norm")]
    ZeroTruth,

    #[error("degenerate normalization: zeta = 0 at iteration {0}")]
    DegenerateNormalization(usize),

    #[error("MAMP diverged: error variance increased for {consecutive} consecutive iterations (t = {iteration}, nu = {nu:e})")]
    Divergence {
        iteration: usize,
        consecutive: usize,
        nu: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown estimator '{0}'")]
    UnknownEstimator(String),

    #[error("trace estimate did not reach target accuracy ({achieved:.3e} > {target:.3e})")]
    TraceAccuracy { achieved: f64, target: f64 },

    #[error("malformed binary fixture: {0}")]
    Fixture(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
