//! Crate-wide error type. Numerical routines fail loudly with located,
//! machine-readable diagnostics instead of propagating NaN.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {reason}")]
    InvalidLattice { reason: String },

    #[error("non-finite value in {context} at node {node}")]
    NonFinite { context: String, node: usize },

    #[error("metric not positive definite at node {node}: min eigenvalue {min_eig:.6e}")]
    NotPositiveDefinite { node: usize, min_eig: f64 },

    #[error("bilipschitz band exceeded at node {node}: eigenvalue {eig:.6e} outside [{lo:.6e}, {hi:.6e}]")]
    BilipschitzViolation {
        node: usize,
        eig: f64,
        lo: f64,
        hi: f64,
    },

    #[error("time step {dt:.6e} exceeds stability bound {dt_max:.6e}")]
    CflViolation { dt: f64, dt_max: f64 },

    #[error("ball radius {r:.6e} exceeds limit {max:.6e}")]
    RadiusTooLarge { r: f64, max: f64 },

    #[error("radius ladder has {got} rungs, need at least {need}")]
    LadderTooShort { got: usize, need: usize },

    #[error("stored slices are not uniformly spaced in [{lo:.6e}, {hi:.6e}]")]
    NonUniformSlices { lo: f64, hi: f64 },

    #[error("time {t:.6e} is outside the stored trajectory [{lo:.6e}, {hi:.6e}]")]
    TimeOutsideTrajectory { t: f64, lo: f64, hi: f64 },

    #[error("lattice mismatch: {expected:?} vs {got:?}")]
    LatticeMismatch { expected: String, got: String },

    #[error("checkpoint format error: {reason}")]
    CheckpointFormat { reason: String },

    #[error("config parse error at line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },

    #[error("unknown config key [{section}] {key}")]
    UnknownKey { section: String, key: String },

    #[error("missing config key [{section}] {key}")]
    MissingKey { section: String, key: String },

    #[error("fit rejected: {reason}")]
    DegenerateFit { reason: String },

    #[error("linear solve failed to converge: residual {residual:.6e} after {iters} iterations")]
    SolveDiverged { residual: f64, iters: usize },

    #[error("{context}: {reason}")]
    Invalid { context: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(context: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            context: context.into(),
            reason: reason.into(),
        }
    }
}
