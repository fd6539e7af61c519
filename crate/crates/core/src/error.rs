use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid bath parameters: {0}")]
    InvalidBath(String),

    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("levels {m} and {n} are degenerate at s = {s} (gap {gap:.3e})")]
    Degenerate { s: f64, m: usize, n: usize, gap: f64 },

    #[error("quadrature failed to reach tolerance: estimated error {error:.3e} on value {value:.3e}")]
    Quadrature { value: f64, error: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("step size collapsed to {step:.3e} at s = {s}")]
    StepCollapse { s: f64, step: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
