use thiserror::Error;

/// Errors produced by the estimation engine and its supporting modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of an operation (basis index,
    /// evaluation point, observation outside the declared interval).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration values.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A quadrature did not settle under node doubling.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The operation needs state that does not exist yet (no data, no active slot).
    #[error("state error: {0}")]
    State(String),

    /// Still buffering the warm-up prefix used for tuning.
    #[error("warm-up in progress: {seen} of {needed} observations buffered")]
    WarmUp { seen: usize, needed: usize },

    /// The estimated density is nonpositive everywhere on the domain.
    #[error("degenerate density: positive part integrates to {0}")]
    DegenerateDensity(f64),

    /// The penalized Gram system could not be factorized as SPD.
    #[error("ill-conditioned system: minimum eigenvalue estimate {min_eigenvalue:e}")]
    IllConditioned { min_eigenvalue: f64 },

    /// Every grid point of the cross-validation search failed.
    #[error("no feasible tuning: every grid point failed")]
    NoFeasibleTuning,

    /// Malformed or inconsistent checkpoint record.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Checkpoint(e.to_string())
    }
}
