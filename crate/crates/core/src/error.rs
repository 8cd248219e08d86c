use thiserror::Error;

/// Errors produced anywhere in the simulation and experiment pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("gate {gate} expects {expected} parameter(s), got {got}")]
    Arity {
        gate: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid qubit targets: {0}")]
    Targets(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("parameter {0} is not eligible for the parameter-shift rule")]
    ShiftIneligible(usize),

    #[error("ill-conditioned least-squares system (condition estimate {0:.3e})")]
    Conditioning(f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error(
        "eigen-iteration did not converge for component {component} after {iterations} iterations"
    )]
    NonConvergence { component: usize, iterations: usize },

    #[error("degenerate feature {0}: zero range on the training set")]
    DegenerateFeature(usize),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
