use thiserror::Error;

/// Errors surfaced by model construction, solvers, and the pipeline stages.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("Riccati iteration did not converge within {iterations} steps (residual {residual:.3e})")]
    DareDidNotConverge { iterations: usize, residual: f64 },

    #[error("QP solver stalled after {0} iterations")]
    QpStalled(usize),

    #[error("LP solver failed: {0}")]
    LpFailure(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("sample domain point is infeasible: {0}")]
    InfeasiblePoint(String),

    #[error("segment refinement aborted: {0}")]
    SegmentAborted(String),

    #[error("refinement cap reached with {remaining} violations outstanding")]
    RefinementStalled { remaining: usize },

    #[error("repair inconsistency: {0}")]
    RepairInconsistency(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
