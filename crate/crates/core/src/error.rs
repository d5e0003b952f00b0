use thiserror::Error;

/// Errors raised by grid construction, integrators, and residual evaluators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("derivative order {0} outside supported range 1..=4")]
    OrderOutOfRange(u32),
    #[error("wavefunction norm {norm:.6e} deviates from 1 by more than {tol:.1e}")]
    NotNormalized { norm: f64, tol: f64 },
    #[error("invalid state parameter: {0}")]
    InvalidState(String),
    #[error("polynomial degree {0} exceeds the supported maximum of 4")]
    DegreeTooHigh(usize),
    #[error("stability guard tripped: {0}")]
    StabilityGuard(String),
    #[error("need at least {need} snapshots, got {got}")]
    InsufficientSnapshots { need: usize, got: usize },
    #[error("series truncation n_max={n_max} is below the potential degree {degree}")]
    TruncationBelowDegree { n_max: usize, degree: usize },
    #[error("CFL guard tripped: {0}")]
    CflViolation(String),
    #[error("density must be strictly positive everywhere (min {0:.3e})")]
    NonpositiveRho(f64),
    #[error("{0} must be positive")]
    NonpositiveInput(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
