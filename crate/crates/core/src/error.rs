use thiserror::Error;

/// Failures surfaced by the solvers and calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("local solve failed in element {element}: {reason}")]
    LocalSolve { element: usize, reason: String },

    #[error("element {element} inverted (det F = {det:.3e})")]
    Inverted { element: usize, det: f64 },

    #[error("Newton failed at step {step} after {iterations} iterations; residual history {history:?}")]
    GlobalSolve {
        step: usize,
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Whether the failure came from the nonlinear solvers (as opposed to bad
    /// input). The CLI maps these to a distinct exit code.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::LocalSolve { .. }
                | Error::Inverted { .. }
                | Error::GlobalSolve { .. }
                | Error::Singular(_)
                | Error::Evaluation(_)
        )
    }
}
