use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum SandlabError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("input length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("problem size exceeds guard: {0}")]
    SizeGuard(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("quadrature tolerance not reached: requested {requested}, achieved {achieved}")]
    ToleranceNotReached { requested: f64, achieved: f64 },
    #[error("missing Green-function entry for displacement {0:?}")]
    MissingDisplacement(Vec<i64>),
    #[error("matrix is numerically singular")]
    Singular,
    #[error("regression needs at least {needed} points, got {got}")]
    DegenerateFit { needed: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error("config file error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SandlabError>;
