use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("point {0} outside [0,1]")]
    Domain(f64),

    #[error("root finder failed on branch {branch}: {reason}")]
    RootFind { branch: usize, reason: String },

    #[error("derivative order {order} exceeds branch smoothness {smoothness}")]
    SmoothnessExceeded { order: usize, smoothness: usize },

    #[error("no convergence after {0} iterations (residual {1:.3e})")]
    NonConvergence(usize, f64),

    #[error("map is not Markov: {0}")]
    NotMarkov(String),

    #[error("critical orbit returns to c at step {0}; operation requires a non-periodic critical point")]
    PeriodicCriticalOrbit(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("grid resolution mismatch: {0} vs {1} (resampling disabled)")]
    ResolutionMismatch(usize, usize),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(String),
}
