use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failed: {0}")]
    Numerical(String),

    #[error("problem is unbounded: {0}")]
    Unbounded(String),

    #[error("polytope is empty")]
    EmptyPolytope,

    #[error("dimension {dim} exceeds the vertex enumeration limit of {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("regression is ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("identified model is unstable (spectral radius {0:.6})")]
    Unstable(f64),

    #[error("window starting at step {start} with length {len} exceeds horizon {horizon}")]
    WindowOutOfHorizon {
        start: usize,
        len: usize,
        horizon: usize,
    },

    #[error("nominal problem is infeasible: {0}")]
    InfeasibleNominal(String),

    #[error("DR request violates the advertised flexibility set (max violation {0:.3e})")]
    InfeasibleRequest(f64),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("series coverage: {0}")]
    Coverage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerical backend (as opposed to bad input).
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Unbounded(_))
    }
}
