use thiserror::Error;

use crate::solver::SolveStats;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid split index q={q} for dimension {dim} (need 1 <= q < dim)")]
    InvalidSplit { q: usize, dim: usize },

    #[error("meshes are not nested: {0}")]
    NonNested(String),

    #[error("point {0:?} lies outside the unit cube")]
    OutOfDomain(Vec<f64>),

    #[error("point {0:?} lies on an interior cell face; supply a cell hint")]
    AmbiguousGradient(Vec<f64>),

    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("epsilon must lie in (0, 1], got {0}")]
    InvalidEpsilon(f64),

    #[error("cutoff width must lie in (0, 1), got delta={0}")]
    InvalidDelta(f64),

    #[error("degenerate cutoff: c2*delta = {0} leaves no inner plateau")]
    DegenerateCutoff(f64),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("coefficient validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("CG did not converge: {stats:?}")]
    NonConvergence { stats: SolveStats },

    #[error("matrix is not SPD: diagonal entry {value} at row {row}")]
    NotSpd { row: usize, value: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid rate sample: {0}")]
    InvalidSample(String),

    #[error("ratio undefined for a zero field")]
    UndefinedRatio,

    #[error("field is not in the required space: {0}")]
    NotInSpace(String),

    #[error("unsupported mesh: {0}")]
    UnsupportedMesh(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
