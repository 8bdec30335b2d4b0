use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DenseMatrix, Vector};
use crate::error::{invalid, DsmError, Result};

/// A (possibly nonlinear) map B: ℝⁿ → ℝⁿ.
///
/// Implementations must be deterministic. The analytic derivative is optional;
/// without it [`ProblemInstance::jacobian`] falls back to central differences.
pub trait Operator: Send + Sync {
    fn apply(&self, u: &Vector) -> Vector;

    fn jacobian(&self, _u: &Vector) -> Option<DenseMatrix> {
        None
    }

    /// The matrix of a linear operator, when the operator is `u ↦ Mu`.
    fn as_matrix(&self) -> Option<&DenseMatrix> {
        None
    }
}

/// `B(u) = Mu`.
#[derive(Clone, Debug)]
pub struct LinearOperator(pub DenseMatrix);

impl Operator for LinearOperator {
    fn apply(&self, u: &Vector) -> Vector {
        self.0.mul_vec(u)
    }

    fn jacobian(&self, _u: &Vector) -> Option<DenseMatrix> {
        Some(self.0.clone())
    }

    fn as_matrix(&self) -> Option<&DenseMatrix> {
        Some(&self.0)
    }
}

type VecFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type JacFn = dyn Fn(&Vector) -> DenseMatrix + Send + Sync;

/// Operator backed by closures, for ad hoc problems.
pub struct FnOperator {
    apply: Box<VecFn>,
    jacobian: Option<Box<JacFn>>,
}

impl FnOperator {
    pub fn new(apply: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        FnOperator {
            apply: Box::new(apply),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&Vector) -> DenseMatrix + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Box::new(jacobian));
        self
    }
}

impl Operator for FnOperator {
    fn apply(&self, u: &Vector) -> Vector {
        (self.apply)(u)
    }

    fn jacobian(&self, u: &Vector) -> Option<DenseMatrix> {
        self.jacobian.as_ref().map(|j| j(u))
    }
}

/// An equation `B(u) = f` together with whatever is known about it.
#[derive(Clone)]
pub struct ProblemInstance {
    name: String,
    dim: usize,
    operator: Arc<dyn Operator>,
    data: Vector,
    known_solution: Option<Vector>,
    m1_bound: Option<f64>,
    m2_bound: Option<f64>,
    working_radius: Option<f64>,
    is_linear: bool,
    is_strictly_monotone: bool,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("data", &self.data)
            .field("known_solution", &self.known_solution)
            .field("m1_bound", &self.m1_bound)
            .field("m2_bound", &self.m2_bound)
            .field("is_linear", &self.is_linear)
            .field("is_strictly_monotone", &self.is_strictly_monotone)
            .finish_non_exhaustive()
    }
}

impl ProblemInstance {
    pub fn new(
        name: impl Into<String>,
        operator: impl Operator + 'static,
        data: Vector,
    ) -> Result<Self> {
        let dim = data.dim();
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if !data.is_finite() {
            return Err(DsmError::NonFinite { context: "problem data" });
        }
        let is_linear = operator.as_matrix().is_some();
        if let Some(m) = operator.as_matrix() {
            if m.dim() != dim {
                return Err(DsmError::DimensionMismatch {
                    expected: dim,
                    found: m.dim(),
                });
            }
        }
        Ok(ProblemInstance {
            name: name.into(),
            dim,
            operator: Arc::new(operator),
            data,
            known_solution: None,
            m1_bound: None,
            m2_bound: if is_linear { Some(0.0) } else { None },
            working_radius: None,
            is_linear,
            is_strictly_monotone: false,
        })
    }

    /// Attaches the minimal-norm solution. Rejects vectors that do not solve `B(y) = f`.
    pub fn with_known_solution(mut self, y: Vector) -> Result<Self> {
        self.check_dim(&y)?;
        let residual = self.apply(&y)?.distance(&self.data);
        let tol = 1e-10 * (1.0 + self.data.norm());
        if residual > tol {
            return Err(invalid(
                "known_solution",
                format!("residual {residual:e} exceeds {tol:e}"),
            ));
        }
        self.known_solution = Some(y);
        Ok(self)
    }

    pub fn with_bounds(mut self, m1: Option<f64>, m2: Option<f64>) -> Self {
        self.m1_bound = m1;
        self.m2_bound = m2;
        self
    }

    pub fn with_working_radius(mut self, radius: f64) -> Self {
        self.working_radius = Some(radius);
        self
    }

    pub fn strictly_monotone(mut self, flag: bool) -> Self {
        self.is_strictly_monotone = flag;
        self
    }

    /// Same operator and bounds, different right-hand side. The known solution is dropped.
    pub fn with_data(&self, data: Vector) -> Result<Self> {
        self.check_dim(&data)?;
        let mut p = self.clone();
        p.data = data;
        p.known_solution = None;
        Ok(p)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &Vector {
        &self.data
    }

    pub fn known_solution(&self) -> Option<&Vector> {
        self.known_solution.as_ref()
    }

    pub fn m1_bound(&self) -> Option<f64> {
        self.m1_bound
    }

    pub fn m2_bound(&self) -> Option<f64> {
        self.m2_bound
    }

    pub fn working_radius(&self) -> Option<f64> {
        self.working_radius
    }

    pub fn is_linear(&self) -> bool {
        self.is_linear
    }

    pub fn is_strictly_monotone(&self) -> bool {
        self.is_strictly_monotone
    }

    pub fn matrix(&self) -> Option<&DenseMatrix> {
        self.operator.as_matrix()
    }

    pub(crate) fn check_dim(&self, u: &Vector) -> Result<()> {
        if u.dim() != self.dim {
            return Err(DsmError::DimensionMismatch {
                expected: self.dim,
                found: u.dim(),
            });
        }
        Ok(())
    }

    /// Evaluates `B(u)`.
    pub fn apply(&self, u: &Vector) -> Result<Vector> {
        self.check_dim(u)?;
        let out = self.operator.apply(u);
        if out.dim() != self.dim {
            return Err(DsmError::DimensionMismatch {
                expected: self.dim,
                found: out.dim(),
            });
        }
        if !out.is_finite() {
            return Err(DsmError::NonFinite { context: "operator" });
        }
        Ok(out)
    }

    /// Evaluates `B(u) + εu − f` for the given right-hand side.
    pub fn regularized_residual(&self, f: &Vector, epsilon: f64, u: &Vector) -> Result<Vector> {
        let mut r = self.apply(u)?;
        r.axpy(epsilon, u);
        r.axpy(-1.0, f);
        Ok(r)
    }

    /// `B′(u)`: the analytic derivative when the operator provides one, central
    /// differences with step `√ε_mach · (1 + |u_j|)` per column otherwise.
    pub fn jacobian(&self, u: &Vector) -> Result<DenseMatrix> {
        self.check_dim(u)?;
        let jac = match self.operator.jacobian(u) {
            Some(j) if j.dim() == self.dim => j,
            Some(j) => {
                return Err(DsmError::DimensionMismatch {
                    expected: self.dim,
                    found: j.dim(),
                })
            }
            None => self.finite_difference_jacobian(u)?,
        };
        if !jac.is_finite() {
            return Err(DsmError::NonFinite { context: "jacobian" });
        }
        Ok(jac)
    }

    /// Central-difference derivative, regardless of whether an analytic one exists.
    pub fn finite_difference_jacobian(&self, u: &Vector) -> Result<DenseMatrix> {
        self.check_dim(u)?;
        let n = self.dim;
        let root_eps = f64::EPSILON.sqrt();
        let mut jac = DenseMatrix::zeros(n);
        let mut probe = u.clone();
        for j in 0..n {
            let h = root_eps * (1.0 + u[j].abs());
            probe[j] = u[j] + h;
            let plus = self.apply(&probe)?;
            probe[j] = u[j] - h;
            let minus = self.apply(&probe)?;
            probe[j] = u[j];
            for i in 0..n {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        Ok(jac)
    }
}

/// Outcome of sampling the monotonicity inequality `⟨B(u) − B(v), u − v⟩ ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub min_pairing: f64,
    pub trials: usize,
    pub pass: bool,
}

/// Tolerance on the pairing for one sample pair; absorbs cancellation in the inner product.
pub fn monotonicity_tolerance(separation: f64) -> f64 {
    1e-10 * (1.0 + separation * separation)
}

/// Uniform sample from the closed ball of radius `radius` about the origin.
pub fn sample_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vector {
    loop {
        let dir: Vector = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = dir.norm();
        if n > 0.0 {
            let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
            return dir.scaled(r / n);
        }
    }
}

pub fn check_monotonicity(
    problem: &ProblemInstance,
    trials: usize,
    seed: u64,
    radius: f64,
) -> Result<MonotonicityReport> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    if !(radius > 0.0) {
        return Err(invalid("radius", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_pairing = f64::INFINITY;
    let mut pass = true;
    for _ in 0..trials {
        let u = sample_ball(&mut rng, problem.dim(), radius);
        let v = sample_ball(&mut rng, problem.dim(), radius);
        let diff = &u - &v;
        let pairing = (&problem.apply(&u)? - &problem.apply(&v)?).inner(&diff);
        if pairing < -monotonicity_tolerance(diff.norm()) {
            pass = false;
        }
        min_pairing = min_pairing.min(pairing);
    }
    Ok(MonotonicityReport {
        min_pairing,
        trials,
        pass,
    })
}

/// Second-order Taylor remainder `‖B(u+z) − B(u) − B′(u)z‖` against `½·M₂·‖z‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaylorReport {
    pub remainder: f64,
    pub bound: f64,
    /// Floating-point allowance added to `bound` when deciding `pass`.
    pub rounding: f64,
    pub pass: bool,
}

pub fn taylor_remainder_check(
    problem: &ProblemInstance,
    u: &Vector,
    z: &Vector,
) -> Result<TaylorReport> {
    let m2 = problem.m2_bound().ok_or(DsmError::Missing("m2_bound"))?;
    problem.check_dim(z)?;
    let shifted = problem.apply(&(u + z))?;
    let base = problem.apply(u)?;
    let linear = problem.jacobian(u)?.mul_vec(z);
    let mut k = &shifted - &base;
    k.axpy(-1.0, &linear);
    let remainder = k.norm();
    let bound = 0.5 * m2 * z.norm() * z.norm();
    let rounding =
        8.0 * f64::EPSILON * (problem.dim() as f64) * (shifted.norm() + base.norm() + linear.norm());
    Ok(TaylorReport {
        remainder,
        bound,
        rounding,
        pass: remainder <= bound * (1.0 + 1e-8) + rounding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(dim: usize) -> ProblemInstance {
        ProblemInstance::new("identity", FnOperator::new(|u| u.clone()), Vector::zeros(dim)).unwrap()
    }

    fn cubic1(m2: f64) -> ProblemInstance {
        let op = FnOperator::new(|u| u.map(|x| x + x * x * x))
            .with_jacobian(|u| DenseMatrix::diagonal(&u.map(|x| 1.0 + 3.0 * x * x).into_inner()));
        ProblemInstance::new("cubic", op, Vector::zeros(1))
            .unwrap()
            .with_bounds(None, Some(m2))
    }

    #[test]
    fn apply_identity_and_cubic() {
        let p = identity(2);
        assert_eq!(p.apply(&Vector::new(vec![1.0, 2.0])).unwrap().as_slice(), &[1.0, 2.0]);

        let op = FnOperator::new(|u| u.map(|x| x + x * x * x));
        let p = ProblemInstance::new("cubic", op, Vector::zeros(2)).unwrap();
        assert_eq!(p.apply(&Vector::new(vec![1.0, -1.0])).unwrap().as_slice(), &[2.0, -2.0]);
    }

    #[test]
    fn apply_linear_diag() {
        let p = ProblemInstance::new(
            "diag",
            LinearOperator(DenseMatrix::diagonal(&[0.0, 1.0])),
            Vector::zeros(2),
        )
        .unwrap();
        assert_eq!(p.apply(&Vector::new(vec![3.0, 4.0])).unwrap().as_slice(), &[0.0, 4.0]);
        assert!(p.is_linear());
        assert_eq!(p.m2_bound(), Some(0.0));
    }

    #[test]
    fn apply_rejects_bad_dimension_and_nonfinite() {
        let p = identity(2);
        assert!(matches!(
            p.apply(&Vector::zeros(3)),
            Err(DsmError::DimensionMismatch { expected: 2, found: 3 })
        ));
        let blowup = FnOperator::new(|u| u.map(|x| (1e300 * x) * 1e300));
        let p = ProblemInstance::new("blowup", blowup, Vector::zeros(1)).unwrap();
        assert!(matches!(
            p.apply(&Vector::new(vec![1.0])),
            Err(DsmError::NonFinite { .. })
        ));
    }

    #[test]
    fn jacobian_analytic_and_identity() {
        let j = identity(3).jacobian(&Vector::new(vec![0.3, -2.0, 5.0])).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                let expected = if i == k { 1.0 } else { 0.0 };
                assert!((j[(i, k)] - expected).abs() < 1e-9);
            }
        }
        let op = FnOperator::new(|u| u.map(|x| x + x * x * x))
            .with_jacobian(|u| DenseMatrix::diagonal(&u.map(|x| 1.0 + 3.0 * x * x).into_inner()));
        let p = ProblemInstance::new("cubic", op, Vector::zeros(2)).unwrap();
        assert_eq!(
            p.jacobian(&Vector::new(vec![1.0, 0.0])).unwrap(),
            DenseMatrix::diagonal(&[4.0, 1.0])
        );
    }

    #[test]
    fn finite_difference_reproduces_matrix() {
        let m = DenseMatrix::from_rows(&[
            vec![2.0, -1.0, 0.5],
            vec![0.0, 3.0, 1.0],
            vec![-4.0, 0.25, 1.0],
        ])
        .unwrap();
        let stored = m.clone();
        let op = FnOperator::new(move |u| m.mul_vec(u));
        let p = ProblemInstance::new("linear-fd", op, Vector::zeros(3)).unwrap();
        let j = p.jacobian(&Vector::new(vec![1.0, -7.0, 0.1])).unwrap();
        let tol = 1e-6 * (1.0 + stored.norm_inf());
        for i in 0..3 {
            for k in 0..3 {
                assert!((j[(i, k)] - stored[(i, k)]).abs() <= tol);
            }
        }
    }

    #[test]
    fn monotonicity_samples() {
        let r = check_monotonicity(&identity(3), 200, 7, 10.0).unwrap();
        assert!(r.pass && r.min_pairing > 0.0);

        let psd = ProblemInstance::new(
            "diag",
            LinearOperator(DenseMatrix::diagonal(&[0.0, 1.0])),
            Vector::zeros(2),
        )
        .unwrap();
        assert!(check_monotonicity(&psd, 200, 7, 10.0).unwrap().pass);

        let anti = ProblemInstance::new("anti", FnOperator::new(|u| -u), Vector::zeros(2)).unwrap();
        let r = check_monotonicity(&anti, 50, 7, 10.0).unwrap();
        assert!(!r.pass && r.min_pairing < 0.0);
    }

    #[test]
    fn monotonicity_rejects_bad_arguments() {
        assert!(check_monotonicity(&identity(1), 0, 1, 1.0).is_err());
        assert!(check_monotonicity(&identity(1), 1, 1, 0.0).is_err());
    }

    #[test]
    fn taylor_remainder_linear_is_rounding_only() {
        let p = ProblemInstance::new(
            "diag",
            LinearOperator(DenseMatrix::diagonal(&[0.0, 1.0])),
            Vector::zeros(2),
        )
        .unwrap();
        let r = taylor_remainder_check(&p, &Vector::new(vec![0.3, 0.7]), &Vector::new(vec![1.1, -0.2]))
            .unwrap();
        assert!(r.remainder <= 1e-15);
        assert!(r.pass);
    }

    #[test]
    fn taylor_remainder_cubic_hand_value() {
        // B(0.1) − B(0) − B′(0)·0.1 = 0.001; M₂ = 6·(1 + 1) on the unit radius.
        let p = cubic1(12.0);
        let r = taylor_remainder_check(&p, &Vector::new(vec![0.0]), &Vector::new(vec![0.1])).unwrap();
        assert!((r.remainder - 0.001).abs() < 1e-15);
        assert!((r.bound - 0.06).abs() < 1e-15);
        assert!(r.pass);
    }

    #[test]
    fn taylor_remainder_zero_step() {
        let p = cubic1(12.0);
        let r = taylor_remainder_check(&p, &Vector::new(vec![0.4]), &Vector::new(vec![0.0])).unwrap();
        assert_eq!(r.remainder, 0.0);
        assert_eq!(r.bound, 0.0);
    }

    #[test]
    fn taylor_requires_m2() {
        assert!(matches!(
            taylor_remainder_check(&identity(1), &Vector::zeros(1), &Vector::zeros(1)),
            Err(DsmError::Missing("m2_bound"))
        ));
    }

    #[test]
    fn known_solution_is_validated() {
        let p = identity(2).with_data(Vector::new(vec![1.0, 2.0])).unwrap();
        assert!(p.clone().with_known_solution(Vector::new(vec![1.0, 2.0])).is_ok());
        assert!(p.with_known_solution(Vector::new(vec![1.0, 2.1])).is_err());
    }
}
