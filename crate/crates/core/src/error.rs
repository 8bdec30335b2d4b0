use thiserror::Error;

use crate::reg_root::RegRoot;

/// Errors produced by the solvers and checks in this crate.
#[derive(Debug, Error)]
pub enum DsmError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("regularized solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    InaccurateSolve { residual: f64, tolerance: f64 },

    #[error("Newton iteration did not reach tolerance in {} iterations (residual {:e})", .best.newton_iters, .best.residual_norm)]
    NewtonMaxIters { best: Box<RegRoot> },

    #[error("Newton line search stalled (residual {:e})", .best.residual_norm)]
    LineSearchStall { best: Box<RegRoot> },

    #[error("integrator step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),

    #[error("missing {0}")]
    Missing(&'static str),

    #[error("unknown corpus problem `{0}`")]
    UnknownProblem(String),

    #[error("{0}")]
    NotApplicable(String),

    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DsmError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> DsmError {
    DsmError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
