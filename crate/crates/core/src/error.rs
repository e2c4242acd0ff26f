use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument violates an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unstable AR polynomial: reflection coefficient {index} has magnitude {magnitude:.6} >= 1")]
    Unstable { index: usize, magnitude: f64 },

    #[error("frequency grids do not match: {0}")]
    GridMismatch(String),

    #[error("trajectory too short: need {needed} samples, got {got}")]
    TrajectoryTooShort { needed: usize, got: usize },

    /// The reconstruction system cannot constrain the listed coarse bins.
    #[error("rank-deficient filter matrix; unconstrained bins: {bins:?}")]
    RankDeficient { bins: Vec<usize> },

    #[error("fit did not converge after {iterations} iterations (best loss {best_loss:.3e})")]
    NonConvergence { iterations: usize, best_loss: f64 },

    #[error("jacobian check failed: relative error {0:.3e}")]
    JacobianMismatch(f64),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Unstable { .. }
                | Error::RankDeficient { .. }
                | Error::NonConvergence { .. }
                | Error::JacobianMismatch(_)
        )
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
