use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodalError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid system parameters: {0}")]
    InvalidParams(String),

    #[error("invalid block structure: {0}")]
    InvalidBlocks(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("time step underflow at t = {t:.6e}: dt = {dt:.3e} fell below dt_min (J = {energy:.6e}, |u|_inf = {linf:.3e})")]
    StepUnderflow {
        t: f64,
        dt: f64,
        energy: f64,
        linf: f64,
    },

    #[error("no decay/non-decay bracket found along the ray after {probes} probes")]
    NoBracket { probes: usize },

    #[error("probe budget exhausted during re-bisection at t = {t:.6e}")]
    ProbeBudget { t: f64 },

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("coefficient {value:.3e} below cone floor {floor:.3e}")]
    BelowFloor { value: f64, floor: f64 },

    #[error("fit window too short: {0} samples")]
    FitWindow(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for NodalError {
    fn from(e: std::io::Error) -> Self {
        NodalError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NodalError>;
