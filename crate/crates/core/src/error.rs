use thiserror::Error;

/// Errors produced by the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("nonuniform time grid on line {line}: step {found} differs from {expected}")]
    NonuniformGrid {
        line: usize,
        expected: f64,
        found: f64,
    },

    #[error("too few points: need at least {needed}, found {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("kernel family `{0}` has no closed-form pre-inner product")]
    UnsupportedKernel(&'static str),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("coordinate descent did not converge after {iterations} sweeps")]
    IterationLimit { iterations: usize, last: Vec<f64> },

    #[error("gradient iterate diverged (norm {norm:.3e}); reduce the step size")]
    StepSize { norm: f64 },

    #[error("sample at t = {found} does not continue the grid (expected t = {expected})")]
    GridDiscontinuity { expected: f64, found: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::IterationLimit { .. } | Error::StepSize { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
