//! ℝⁿ as the working Hilbert space: vectors, square matrices, and problem
//! instances `B(u) = f` with the numerical certificates for monotonicity and
//! the second-order Taylor bound.

mod matrix;
mod problem;
mod vector;

pub use matrix::DenseMatrix;
pub use problem::{
    check_monotonicity, monotonicity_tolerance, sample_ball, taylor_remainder_check, FnOperator,
    LinearOperator, MonotonicityReport, Operator, ProblemInstance, TaylorReport,
};
pub use vector::Vector;
