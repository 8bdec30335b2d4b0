//! Regularized roots `B(V) + εV = f` and the path `ε ↦ V_ε`.
//!
//! For monotone `B` and `ε > 0` the regularized equation has exactly one
//! root. It is found here by damped Newton using the same shifted linear
//! solve as the flow, so a failure in one usually shows up in the other.
//! Pairing `B(V_ε) − B(y) + εV_ε = 0` with `V_ε − y` and using monotonicity
//! gives `⟨V_ε, V_ε − y⟩ ≤ 0`, which is why `‖V_ε‖ ≤ ‖y‖` along the path.

use serde::Serialize;

use crate::error::{invalid, DsmError, Result};
use crate::hilbert::{DenseMatrix, ProblemInstance, Vector};
use crate::reg_linear::reg_solve;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegRoot {
    pub epsilon: f64,
    pub v: Vector,
    pub residual_norm: f64,
    pub newton_iters: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Absolute residual tolerance; `None` means `1e-12·(1 + ‖f‖)`.
    pub tol: Option<f64>,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: None,
            max_iters: 100,
        }
    }
}

pub fn default_newton_tol(f: &Vector) -> f64 {
    1e-12 * (1.0 + f.norm())
}

const MIN_STEP: f64 = 1.0 / (1u64 << 30) as f64;

/// Damped Newton on `F(v) = B(v) + εv − f`, with `f` replaced by `f_override` when given.
///
/// Each step solves `(B′(v) + εI)d = −F(v)` and halves `λ` from 1 until
/// `‖F(v + λd)‖ ≤ (1 − λ/4)‖F(v)‖`.
pub fn solve_regularized(
    problem: &ProblemInstance,
    f_override: Option<&Vector>,
    epsilon: f64,
    init: &Vector,
    options: NewtonOptions,
) -> Result<RegRoot> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    let f = f_override.unwrap_or(problem.data());
    problem.check_dim(f)?;
    problem.check_dim(init)?;
    let tol = options.tol.unwrap_or_else(|| default_newton_tol(f));

    let mut v = init.clone();
    let mut residual = problem.regularized_residual(f, epsilon, &v)?;
    let mut res_norm = residual.norm();
    let mut iters = 0;
    let root = |v: &Vector, res_norm: f64, iters: usize| RegRoot {
        epsilon,
        v: v.clone(),
        residual_norm: res_norm,
        newton_iters: iters,
    };

    while res_norm > tol {
        if iters >= options.max_iters {
            return Err(DsmError::NewtonMaxIters {
                best: Box::new(root(&v, res_norm, iters)),
            });
        }
        let jac = problem.jacobian(&v)?;
        let step = reg_solve(&jac, epsilon, &-&residual)?.solution;
        let mut lambda = 1.0;
        loop {
            let mut trial = v.clone();
            trial.axpy(lambda, &step);
            let trial_res = problem.regularized_residual(f, epsilon, &trial)?;
            let trial_norm = trial_res.norm();
            if trial_norm <= (1.0 - 0.25 * lambda) * res_norm {
                v = trial;
                residual = trial_res;
                res_norm = trial_norm;
                break;
            }
            lambda *= 0.5;
            if lambda < MIN_STEP {
                return Err(DsmError::LineSearchStall {
                    best: Box::new(root(&v, res_norm, iters)),
                });
            }
        }
        iters += 1;
    }
    Ok(root(&v, res_norm, iters))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegPathEntry {
    pub epsilon: f64,
    pub root: RegRoot,
    /// False when Newton stopped early; `root` then holds the best iterate.
    pub converged: bool,
    pub v_norm: f64,
    pub error_to_y: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegPathResult {
    pub entries: Vec<RegPathEntry>,
    /// `‖V_{k+1} − V_k‖` for consecutive entries.
    pub b_gaps: Vec<f64>,
}

impl RegPathResult {
    /// Whether `‖V_ε − y‖` never increases along the path. `None` without a known solution.
    pub fn error_nonincreasing(&self) -> Option<bool> {
        let errs: Option<Vec<f64>> = self.entries.iter().map(|e| e.error_to_y).collect();
        errs.map(|e| e.windows(2).all(|w| w[1] <= w[0]))
    }
}

/// Solves `V_ε` for each `ε` (strictly decreasing), warm-starting from the previous root.
pub fn regularization_path(
    problem: &ProblemInstance,
    epsilons: &[f64],
    options: NewtonOptions,
) -> Result<RegPathResult> {
    if epsilons.is_empty() {
        return Err(invalid("epsilons", "must not be empty"));
    }
    if epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(invalid("epsilons", "must all be positive"));
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("epsilons", "must be strictly decreasing"));
    }
    let y = problem.known_solution();
    let mut init = Vector::zeros(problem.dim());
    let mut entries = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let (root, converged) = match solve_regularized(problem, None, epsilon, &init, options) {
            Ok(root) => (root, true),
            Err(DsmError::NewtonMaxIters { best }) | Err(DsmError::LineSearchStall { best }) => {
                (*best, false)
            }
            Err(e) => return Err(e),
        };
        init = root.v.clone();
        entries.push(RegPathEntry {
            epsilon,
            v_norm: root.v.norm(),
            error_to_y: y.map(|y| root.v.distance(y)),
            root,
            converged,
        });
    }
    let b_gaps = entries
        .windows(2)
        .map(|w| w[1].root.v.distance(&w[0].root.v))
        .collect();
    Ok(RegPathResult { entries, b_gaps })
}

/// Relative singular-value cutoff for the linear pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-12;

/// Minimum-norm least-squares solution `M⁺f` via the singular value decomposition.
pub fn pseudoinverse_solve(m: &DenseMatrix, f: &Vector) -> Result<Vector> {
    if m.dim() != f.dim() {
        return Err(DsmError::DimensionMismatch {
            expected: m.dim(),
            found: f.dim(),
        });
    }
    let svd = m.to_nalgebra().svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let rhs = nalgebra::DVector::from_column_slice(f.as_slice());
    let x = svd
        .solve(&rhs, PINV_CUTOFF * sigma_max)
        .map_err(|e| DsmError::NotApplicable(e.to_string()))?;
    Ok(x.iter().copied().collect())
}

/// Orthonormal basis of the numerical kernel of `m` (same cutoff as the pseudoinverse).
pub fn kernel_basis(m: &DenseMatrix) -> Vec<Vector> {
    let svd = m.to_nalgebra().svd(false, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let v_t = svd.v_t.expect("requested right singular vectors");
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= PINV_CUTOFF * sigma_max)
        .map(|(i, _)| v_t.row(i).iter().copied().collect())
        .collect()
}

/// The minimal-norm element of `{z : B(z) = f}`.
///
/// Strictly monotone problems have a single solution, returned from the
/// stored value; linear problems use the pseudoinverse. Anything else has no
/// oracle.
pub fn minimal_norm_solution(problem: &ProblemInstance) -> Result<Vector> {
    if problem.is_strictly_monotone() {
        if let Some(y) = problem.known_solution() {
            return Ok(y.clone());
        }
    }
    if let Some(m) = problem.matrix() {
        return pseudoinverse_solve(m, problem.data());
    }
    Err(DsmError::NotApplicable(format!(
        "no minimal-norm oracle for problem `{}`",
        problem.name()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{FnOperator, LinearOperator};

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec())
    }

    fn identity(f: &[f64]) -> ProblemInstance {
        let op = FnOperator::new(|u| u.clone())
            .with_jacobian(|u| DenseMatrix::identity(u.dim()));
        ProblemInstance::new("identity", op, v(f)).unwrap()
    }

    fn cubic_scalar(f: f64) -> ProblemInstance {
        let op = FnOperator::new(|u| u.map(|x| x + x * x * x))
            .with_jacobian(|u| DenseMatrix::diagonal(&u.map(|x| 1.0 + 3.0 * x * x).into_inner()));
        ProblemInstance::new("cubic", op, v(&[f])).unwrap()
    }

    fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn identity_root() {
        let p = identity(&[2.0, 0.0]);
        let r = solve_regularized(&p, None, 1.0, &Vector::zeros(2), NewtonOptions::default()).unwrap();
        assert!(r.v.distance(&v(&[1.0, 0.0])) < 1e-14);
    }

    #[test]
    fn linear_root_matches_closed_form() {
        let m = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![-1.0, 0.5]]).unwrap();
        let f = v(&[1.0, -3.0]);
        let p = ProblemInstance::new("lin", LinearOperator(m.clone()), f.clone()).unwrap();
        let eps = 0.3;
        let r = solve_regularized(&p, None, eps, &Vector::zeros(2), NewtonOptions::default()).unwrap();
        let closed = reg_solve(&m, eps, &f).unwrap().solution;
        assert!(r.v.distance(&closed) < 1e-12);
        assert!(r.newton_iters <= 2);
    }

    #[test]
    fn cubic_root_against_bisection() {
        let eps = 1e-8;
        let p = cubic_scalar(2.0);
        let r = solve_regularized(&p, None, eps, &v(&[0.0]), NewtonOptions::default()).unwrap();
        let oracle = bisect(|x| x + x * x * x + eps * x - 2.0, 0.0, 2.0);
        assert!((r.v[0] - oracle).abs() < 1e-12);
        assert!((r.v[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn override_data_is_used() {
        let p = identity(&[2.0]);
        let r = solve_regularized(&p, Some(&v(&[4.0])), 1.0, &v(&[0.0]), NewtonOptions::default())
            .unwrap();
        assert!((r.v[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn max_iters_reports_best_iterate() {
        let p = cubic_scalar(1e6);
        let opts = NewtonOptions {
            tol: None,
            max_iters: 2,
        };
        match solve_regularized(&p, None, 1e-3, &v(&[0.0]), opts) {
            Err(DsmError::NewtonMaxIters { best }) => {
                assert_eq!(best.newton_iters, 2);
                assert!(best.residual_norm < 1e6);
            }
            other => panic!("expected max iters, got {other:?}"),
        }
    }

    #[test]
    fn path_on_identity() {
        let p = identity(&[1.0]).with_known_solution(v(&[1.0])).unwrap();
        let path = regularization_path(&p, &[1.0, 0.5], NewtonOptions::default()).unwrap();
        assert!((path.entries[0].root.v[0] - 0.5).abs() < 1e-14);
        assert!((path.entries[1].root.v[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!(path.entries[0].v_norm < path.entries[1].v_norm);
        assert!(path.entries.iter().all(|e| e.v_norm <= 1.0));
        assert!((path.b_gaps[0] - (2.0 / 3.0 - 0.5)).abs() < 1e-14);
        assert_eq!(path.error_nonincreasing(), Some(true));
    }

    #[test]
    fn path_rejects_bad_grids() {
        let p = identity(&[1.0]);
        let o = NewtonOptions::default();
        assert!(regularization_path(&p, &[], o).is_err());
        assert!(regularization_path(&p, &[0.5, 1.0], o).is_err());
        assert!(regularization_path(&p, &[0.5, 0.5], o).is_err());
        assert!(regularization_path(&p, &[1.0, 0.0], o).is_err());
    }

    #[test]
    fn pseudoinverse_drops_kernel_component() {
        let m = DenseMatrix::diagonal(&[0.0, 1.0]);
        let f = m.mul_vec(&v(&[5.0, 3.0]));
        assert_eq!(f, v(&[0.0, 3.0]));
        let p = ProblemInstance::new("diag", LinearOperator(m.clone()), f).unwrap();
        let y = minimal_norm_solution(&p).unwrap();
        assert!(y.distance(&v(&[0.0, 3.0])) < 1e-14);
        let kernel = kernel_basis(&m);
        assert_eq!(kernel.len(), 1);
        assert!(kernel[0].inner(&y).abs() < 1e-9);
    }

    #[test]
    fn strictly_monotone_oracle_uses_stored_solution() {
        let p = cubic_scalar(2.0)
            .with_known_solution(v(&[1.0]))
            .unwrap()
            .strictly_monotone(true);
        assert_eq!(minimal_norm_solution(&p).unwrap(), v(&[1.0]));
        assert!(minimal_norm_solution(&cubic_scalar(2.0)).is_err());
    }
}
