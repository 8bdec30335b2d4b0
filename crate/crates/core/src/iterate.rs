//! The discrete regularized Newton process
//!
//! ```text
//! u_{n+1} = u_n − h_n (B′(u_n) + ε_n I)⁻¹ (B(u_n) + ε_n u_n − f)
//! ```
//!
//! Let `V_n` be the regularized root for `ε_n`, `z_n = u_n − V_n` and
//! `g_n = ‖z_n‖`. A second-order Taylor expansion gives
//! `z_{n+1} = (1 − h_n) z_n − h_n (B′(u_n)+ε_n I)⁻¹ K(z_n) − (V_{n+1} − V_n)`
//! with `‖K(z_n)‖ ≤ ½ M₂ g_n²`, so
//! `g_{n+1} ≤ (1 − h_n) g_n + h_n c g_n² / ε_n + b_n` where `c = ½ M₂` and
//! `b_n = ‖V_{n+1} − V_n‖`. Choosing `ε_n = 2 c g_n` collapses the quadratic
//! term and leaves `g_{n+1} ≤ (1 − h_n/2) g_n + b_n`; see [`crate::lemma`] for
//! why that recursion drives `g_n` to zero.
//!
//! That schedule needs `V_n`, which is only available when it is computed
//! alongside, so it is offered as [`Schedule::Oracle`] for verification. The
//! geometric schedule is the practical mode.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::checks::BoundCheck;
use crate::error::{invalid, DsmError, Result};
use crate::flow::full_precision;
use crate::hilbert::{ProblemInstance, Vector};
use crate::reg_linear::reg_solve;
use crate::reg_root::{solve_regularized, NewtonOptions, RegRoot};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `ε_n = 2c·‖u_n − V_{ε_n}‖`, solved as a scalar fixed point at every step.
    Oracle { c: f64 },
    /// `ε_n = max(floor, ε₀ qⁿ)`
    Geometric { eps0: f64, ratio: f64, floor: f64 },
    Constant { epsilon: f64 },
}

impl Schedule {
    /// The oracle schedule with `c = ½·M₂` taken from the problem. Linear problems
    /// have `M₂ = 0`, where any positive constant is valid; `linear_c` is used then.
    pub fn oracle_for(problem: &ProblemInstance, linear_c: f64) -> Result<Schedule> {
        let m2 = problem.m2_bound().ok_or(DsmError::Missing("m2_bound for oracle schedule"))?;
        let c = if m2 > 0.0 { 0.5 * m2 } else { linear_c };
        let s = Schedule::Oracle { c };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Oracle { c } if !(c > 0.0) => Err(invalid("c", "must be positive")),
            Schedule::Geometric { eps0, ratio, floor } => {
                if !(eps0 > 0.0) {
                    Err(invalid("eps0", "must be positive"))
                } else if !(ratio > 0.0 && ratio < 1.0) {
                    Err(invalid("ratio", "must lie in (0, 1)"))
                } else if !(floor >= 0.0) {
                    Err(invalid("floor", "must be nonnegative"))
                } else {
                    Ok(())
                }
            }
            Schedule::Constant { epsilon } if !(epsilon > 0.0) => {
                Err(invalid("epsilon", "must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, Schedule::Oracle { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// Constant `h = 2 ln p` with `1 < p ≤ √e`.
    ConstantP { p: f64 },
    /// One step size per iteration, each in `(0, 1]`.
    Explicit { h: Vec<f64> },
}

impl StepRule {
    pub fn step(&self, n: usize) -> Result<f64> {
        match self {
            StepRule::ConstantP { p } => constant_step(*p),
            StepRule::Explicit { h } => {
                let hn = *h
                    .get(n)
                    .ok_or_else(|| invalid("h", format!("no step size given for n = {n}")))?;
                check_step(hn)?;
                Ok(hn)
            }
        }
    }
}

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(invalid("h", format!("step size must lie in (0, 1], got {h}")));
    }
    Ok(())
}

/// `h = 2 ln p` for `1 < p ≤ √e`, so that `a = h/2 = ln p ∈ (0, ½]`.
///
/// The result is clamped to 1 so that `p = √e` does not overshoot by an ulp.
pub fn constant_step(p: f64) -> Result<f64> {
    if !(p > 1.0 && p <= std::f64::consts::E.sqrt()) {
        return Err(invalid("p", format!("must lie in (1, sqrt(e)], got {p}")));
    }
    Ok((2.0 * p.ln()).min(1.0))
}

/// One step of the process with data `f_active`.
pub fn iterate_step(
    problem: &ProblemInstance,
    u_n: &Vector,
    eps_n: f64,
    h_n: f64,
    f_active: &Vector,
) -> Result<Vector> {
    check_step(h_n)?;
    let residual = problem.regularized_residual(f_active, eps_n, u_n)?;
    let jac = problem.jacobian(u_n)?;
    let d = reg_solve(&jac, eps_n, &residual)?.solution;
    let mut next = u_n.clone();
    next.axpy(-h_n, &d);
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub schedule: Schedule,
    pub steps: StepRule,
    pub max_n: usize,
    /// `None` means `1e-10·(1 + ‖f‖)`.
    pub stop_residual: Option<f64>,
    /// Also compute `V_n`, `g_n`, `b_n` for non-oracle schedules.
    pub track_oracle: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationStep {
    pub n: usize,
    pub u: Vector,
    pub eps: f64,
    pub h: f64,
    /// `‖B(u_n) + ε_n u_n − f‖`
    pub residual: f64,
    /// `‖u_n − V_n‖`
    pub oracle_g: Option<f64>,
    /// `‖V_{n+1} − V_n‖`; absent on the last recorded step.
    pub oracle_b: Option<f64>,
    #[serde(skip)]
    pub oracle_v: Option<Vector>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationHistory {
    pub schedule: Schedule,
    pub steps: Vec<IterationStep>,
    pub converged: bool,
}

pub fn default_stop_residual(f: &Vector) -> f64 {
    1e-10 * (1.0 + f.norm())
}

/// Floor for the oracle schedule's regularization parameter.
pub const ORACLE_EPS_FLOOR: f64 = 1e-12;

struct OracleSolver<'a> {
    problem: &'a ProblemInstance,
    f: &'a Vector,
    warm: Vector,
    newton: NewtonOptions,
}

impl OracleSolver<'_> {
    fn root(&mut self, eps: f64) -> Result<RegRoot> {
        let r = solve_regularized(self.problem, Some(self.f), eps, &self.warm, self.newton)?;
        self.warm = r.v.clone();
        Ok(r)
    }

    /// Finds `ε` with `ε = 2c‖u − V_ε‖` by bisection in `ln ε`.
    ///
    /// `φ(ε) = 2c‖u − V_ε‖ − ε` is positive as `ε → 0⁺` (unless `u` solves the
    /// equation) and negative for large `ε`, since `V_ε → 0`. The returned
    /// root sits on the `φ ≤ 0` side of the final bracket.
    fn fixed_point(&mut self, u: &Vector, c: f64, guess: f64) -> Result<RegRoot> {
        let phi = |s: &mut Self, eps: f64| -> Result<(f64, RegRoot)> {
            let r = s.root(eps)?;
            Ok((2.0 * c * u.distance(&r.v) - eps, r))
        };
        let start = guess.max(ORACLE_EPS_FLOOR);
        let (val, root) = phi(self, start)?;
        let (mut lo, mut hi, mut r_hi);
        if val > 0.0 {
            lo = start;
            hi = start;
            loop {
                hi *= 4.0;
                if hi > 1e15 {
                    return Err(DsmError::NotApplicable(
                        "oracle schedule: no upper bracket for epsilon".into(),
                    ));
                }
                let (val, root) = phi(self, hi)?;
                if val <= 0.0 {
                    r_hi = root;
                    break;
                }
                lo = hi;
            }
        } else {
            hi = start;
            r_hi = root;
            loop {
                if hi <= ORACLE_EPS_FLOOR {
                    return Ok(r_hi);
                }
                let trial = (hi / 4.0).max(ORACLE_EPS_FLOOR);
                let (val, root) = phi(self, trial)?;
                if val > 0.0 {
                    lo = trial;
                    break;
                }
                hi = trial;
                r_hi = root;
            }
        }
        for _ in 0..200 {
            if hi / lo - 1.0 <= 1e-13 {
                break;
            }
            let mid = (lo * hi).sqrt();
            let (val, root) = phi(self, mid)?;
            if val > 0.0 {
                lo = mid;
            } else {
                hi = mid;
                r_hi = root;
            }
        }
        Ok(r_hi)
    }
}

/// Runs the process from `u0` until the residual drops below the stop level or `max_n` steps.
pub fn run_iteration(
    problem: &ProblemInstance,
    f_active: &Vector,
    u0: &Vector,
    config: &IterationConfig,
) -> Result<IterationHistory> {
    config.schedule.validate()?;
    if config.max_n == 0 {
        return Err(invalid("max_n", "must be at least 1"));
    }
    problem.check_dim(f_active)?;
    problem.check_dim(u0)?;
    let stop = config
        .stop_residual
        .unwrap_or_else(|| default_stop_residual(f_active));
    let track = config.track_oracle || config.schedule.is_oracle();
    let mut oracle = OracleSolver {
        problem,
        f: f_active,
        warm: u0.clone(),
        newton: NewtonOptions::default(),
    };

    let mut steps: Vec<IterationStep> = Vec::new();
    let mut u = u0.clone();
    let mut converged = false;
    let mut prev_eps = 1.0;
    for n in 0..=config.max_n {
        let (eps, v_n) = match config.schedule {
            Schedule::Oracle { c } => {
                let r = oracle.fixed_point(&u, c, prev_eps)?;
                (r.epsilon, Some(r.v))
            }
            Schedule::Geometric { eps0, ratio, floor } => {
                (floor.max(eps0 * ratio.powi(n as i32)), None)
            }
            Schedule::Constant { epsilon } => (epsilon, None),
        };
        if !(eps > 0.0) {
            return Err(invalid("schedule", format!("produced eps_{n} = {eps}")));
        }
        prev_eps = eps;
        let v_n = match (v_n, track) {
            (Some(v), _) => Some(v),
            (None, true) => Some(oracle.root(eps)?.v),
            (None, false) => None,
        };
        if let (Some(v), Some(last)) = (&v_n, steps.last_mut()) {
            if let Some(prev_v) = &last.oracle_v {
                last.oracle_b = Some(v.distance(prev_v));
            }
        }
        let residual = problem.regularized_residual(f_active, eps, &u)?.norm();
        let h = config.steps.step(n)?;
        steps.push(IterationStep {
            n,
            u: u.clone(),
            eps,
            h,
            residual,
            oracle_g: v_n.as_ref().map(|v| u.distance(v)),
            oracle_b: None,
            oracle_v: v_n,
        });
        if residual <= stop {
            converged = true;
            break;
        }
        if n == config.max_n {
            break;
        }
        u = iterate_step(problem, &u, eps, h, f_active)?;
    }
    Ok(IterationHistory {
        schedule: config.schedule.clone(),
        steps,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecursionReport {
    pub per_step_pass: Vec<bool>,
    pub check: BoundCheck,
}

/// Absolute floor, relative to `‖u_{n+1}‖`, for iterates that have already reached `V_n`.
const RECURSION_ROUNDING: f64 = 1e-12;

const RECURSION_RELATION: &str = "g_{n+1} <= (1 - h_n/2)*g_n + b_n";

/// Checks `g_{n+1} ≤ (1 − h_n/2) g_n + b_n·(1 + 1e-8) + 1e-12·(1 + ‖u_{n+1}‖)` for every
/// recorded pair of steps.
///
/// For nonlinear problems the inequality relies on `ε_n = 2c g_n`, so only
/// oracle runs qualify. Linear problems have no quadratic term and accept any schedule.
pub fn verify_step_recursion(
    history: &IterationHistory,
    problem: &ProblemInstance,
) -> Result<RecursionReport> {
    if !history.schedule.is_oracle() && !problem.is_linear() {
        return Err(DsmError::NotApplicable(
            "step recursion needs the oracle schedule on nonlinear problems".into(),
        ));
    }
    let mut per_step = Vec::new();
    let mut checks = Vec::new();
    for pair in history.steps.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        let g = cur.oracle_g.ok_or(DsmError::Missing("oracle_g in history"))?;
        let b = cur.oracle_b.ok_or(DsmError::Missing("oracle_b in history"))?;
        let g_next = next.oracle_g.ok_or(DsmError::Missing("oracle_g in history"))?;
        let rounding = RECURSION_ROUNDING * (1.0 + next.u.norm());
        let rhs = (1.0 - 0.5 * cur.h) * g + b * (1.0 + 1e-8) + rounding;
        let c = BoundCheck::new("step-recursion", RECURSION_RELATION, g_next, rhs, 1.0);
        per_step.push(c.pass);
        checks.push(c);
    }
    Ok(RecursionReport {
        per_step_pass: per_step,
        check: BoundCheck::worst_of("step-recursion", RECURSION_RELATION, checks),
    })
}

/// The Taylor remainder along the iterates:
/// `‖B(u_n) + ε_n u_n − f − (B′(u_n)+ε_n I) z_n‖ ≤ ½ M₂ g_n²`, plus rounding and the
/// oracle residual `‖B(V_n) + ε_n V_n − f‖`.
pub fn taylor_along_iterates(
    history: &IterationHistory,
    problem: &ProblemInstance,
    f_active: &Vector,
) -> Result<BoundCheck> {
    let m2 = problem.m2_bound().ok_or(DsmError::Missing("m2_bound"))?;
    let relation = "||K(z_n)|| <= 0.5*M2*g_n^2";
    let mut checks = Vec::new();
    for s in &history.steps {
        let Some(v) = &s.oracle_v else { continue };
        let z = &s.u - v;
        let residual = problem.regularized_residual(f_active, s.eps, &s.u)?;
        let linear = problem.jacobian(&s.u)?.shifted(s.eps).mul_vec(&z);
        let k = (&residual - &linear).norm();
        let scale = problem.apply(&s.u)?.norm()
            + problem.apply(v)?.norm()
            + s.eps * (s.u.norm() + v.norm())
            + 2.0 * f_active.norm()
            + linear.norm();
        let rounding = 8.0 * f64::EPSILON * problem.dim() as f64 * scale;
        // V_n solves its equation only up to the Newton tolerance, and that residual enters K directly.
        let oracle_residual = problem.regularized_residual(f_active, s.eps, v)?.norm();
        let bound = 0.5 * m2 * z.norm() * z.norm() + rounding + oracle_residual;
        checks.push(BoundCheck::new("taylor-remainder", relation, k, bound, 1.0 + 1e-8));
    }
    Ok(BoundCheck::worst_of("taylor-remainder", relation, checks))
}

impl IterationHistory {
    pub fn last(&self) -> &IterationStep {
        self.steps.last().expect("history is never empty")
    }

    /// Columns `n, eps_n, h_n, residual_n, oracle_g_n, oracle_b_n`; absent values are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "eps_n", "h_n", "residual_n", "oracle_g_n", "oracle_b_n"])?;
        let opt = |x: Option<f64>| x.map(full_precision).unwrap_or_default();
        for s in &self.steps {
            w.write_record([
                s.n.to_string(),
                full_precision(s.eps),
                full_precision(s.h),
                full_precision(s.residual),
                opt(s.oracle_g),
                opt(s.oracle_b),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{DenseMatrix, FnOperator, LinearOperator};

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec())
    }

    fn identity(f: &[f64]) -> ProblemInstance {
        let op = FnOperator::new(|u| u.clone()).with_jacobian(|u| DenseMatrix::identity(u.dim()));
        ProblemInstance::new("identity", op, v(f)).unwrap()
    }

    fn linear() -> ProblemInstance {
        let m = DenseMatrix::from_rows(&[vec![2.0, 1.0, 0.0], vec![-1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]])
            .unwrap();
        ProblemInstance::new("lin", LinearOperator(m), v(&[1.0, 2.0, 0.0])).unwrap()
    }

    #[test]
    fn one_step_on_identity() {
        let p = identity(&[1.0]);
        let next = iterate_step(&p, &v(&[0.0]), 1.0, 1.0, p.data()).unwrap();
        assert!((next[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn full_step_on_linear_reaches_regularized_root() {
        let p = linear();
        let eps = 0.2;
        let next = iterate_step(&p, &v(&[3.0, -1.0, 4.0]), eps, 1.0, p.data()).unwrap();
        let root = reg_solve(p.matrix().unwrap(), eps, p.data()).unwrap().solution;
        assert!(next.distance(&root) < 1e-12);
    }

    #[test]
    fn small_step_barely_moves() {
        let p = linear();
        let u = v(&[3.0, -1.0, 4.0]);
        let next = iterate_step(&p, &u, 0.2, 1e-12, p.data()).unwrap();
        assert!(next.distance(&u) < 1e-9);
        assert!(iterate_step(&p, &u, 0.2, 0.0, p.data()).is_err());
        assert!(iterate_step(&p, &u, 0.2, 1.5, p.data()).is_err());
    }

    #[test]
    fn constant_step_values() {
        let h = constant_step(std::f64::consts::E.sqrt()).unwrap();
        assert!(h <= 1.0 && (h - 1.0).abs() < 1e-15);
        assert!((constant_step(0.25f64.exp()).unwrap() - 0.5).abs() < 1e-15);
        assert!(constant_step(2.0).is_err());
        assert!(constant_step(1.0).is_err());
    }

    #[test]
    fn linear_constant_schedule_converges_in_one_full_step() {
        let p = linear();
        let cfg = IterationConfig {
            schedule: Schedule::Constant { epsilon: 0.1 },
            steps: StepRule::ConstantP { p: std::f64::consts::E.sqrt() },
            max_n: 5,
            stop_residual: None,
            track_oracle: false,
        };
        let hist = run_iteration(&p, p.data(), &Vector::zeros(3), &cfg).unwrap();
        assert!(hist.converged);
        assert_eq!(hist.steps.len(), 2);
        assert!(hist.steps[0].oracle_g.is_none());
    }

    #[test]
    fn linear_closed_form_contraction() {
        let p = linear();
        let h = 0.5;
        let cfg = IterationConfig {
            schedule: Schedule::Constant { epsilon: 0.1 },
            steps: StepRule::Explicit { h: vec![h; 12] },
            max_n: 10,
            stop_residual: Some(0.0),
            track_oracle: true,
        };
        let hist = run_iteration(&p, p.data(), &v(&[1.0, 1.0, 1.0]), &cfg).unwrap();
        let g0 = hist.steps[0].oracle_g.unwrap();
        for s in &hist.steps {
            let expected = (1.0 - h).powi(s.n as i32) * g0;
            assert!((s.oracle_g.unwrap() - expected).abs() <= 1e-9 * expected);
        }
        let rep = verify_step_recursion(&hist, &p).unwrap();
        assert!(rep.per_step_pass.iter().all(|&x| x));
        assert_eq!(rep.per_step_pass.len(), 10);
    }

    #[test]
    fn corrupted_history_fails_recursion() {
        let p = linear();
        let cfg = IterationConfig {
            schedule: Schedule::Constant { epsilon: 0.1 },
            steps: StepRule::Explicit { h: vec![1.0; 6] },
            max_n: 4,
            stop_residual: Some(0.0),
            track_oracle: true,
        };
        let mut hist = run_iteration(&p, p.data(), &v(&[1.0, 1.0, 1.0]), &cfg).unwrap();
        // g_1 = 0 exactly for a full step; inflate it past (1 − ½)g_0.
        let g0 = hist.steps[0].oracle_g.unwrap();
        hist.steps[1].oracle_g = Some(0.55 * g0 * 1.1);
        let rep = verify_step_recursion(&hist, &p).unwrap();
        assert!(!rep.per_step_pass[0]);
        assert!(!rep.check.pass);
    }

    #[test]
    fn recursion_requires_oracle_fields() {
        let p = linear();
        let cfg = IterationConfig {
            schedule: Schedule::Constant { epsilon: 0.1 },
            steps: StepRule::Explicit { h: vec![0.5; 4] },
            max_n: 3,
            stop_residual: Some(0.0),
            track_oracle: false,
        };
        let hist = run_iteration(&p, p.data(), &v(&[1.0, 1.0, 1.0]), &cfg).unwrap();
        assert!(matches!(verify_step_recursion(&hist, &p), Err(DsmError::Missing(_))));
    }

    #[test]
    fn oracle_schedule_solves_fixed_point() {
        let op = FnOperator::new(|u| u.map(|x| x * x * x))
            .with_jacobian(|u| DenseMatrix::diagonal(&u.map(|x| 3.0 * x * x).into_inner()));
        let p = ProblemInstance::new("cube", op, v(&[1.0]))
            .unwrap()
            .with_bounds(None, Some(6.0 * 3.0));
        let cfg = IterationConfig {
            schedule: Schedule::oracle_for(&p, 1.0).unwrap(),
            steps: StepRule::ConstantP { p: std::f64::consts::E.sqrt() },
            max_n: 8,
            stop_residual: None,
            track_oracle: false,
        };
        let hist = run_iteration(&p, p.data(), &v(&[0.5]), &cfg).unwrap();
        for s in &hist.steps {
            let g = s.oracle_g.unwrap();
            assert!((s.eps - 2.0 * 9.0 * g).abs() <= 1e-9 * s.eps, "{s:?}");
        }
        let rep = verify_step_recursion(&hist, &p).unwrap();
        assert!(rep.check.pass, "{:?}", rep.check);
        assert!(taylor_along_iterates(&hist, &p, p.data()).unwrap().pass);
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::Geometric { eps0: 1.0, ratio: 1.0, floor: 0.0 }.validate().is_err());
        assert!(Schedule::Geometric { eps0: 0.0, ratio: 0.5, floor: 0.0 }.validate().is_err());
        assert!(Schedule::Constant { epsilon: 0.0 }.validate().is_err());
        assert!(Schedule::Oracle { c: 0.0 }.validate().is_err());
        let p = identity(&[1.0]);
        assert!(Schedule::oracle_for(&p, 1.0).is_err());
    }

    #[test]
    fn csv_columns() {
        let p = linear();
        let cfg = IterationConfig {
            schedule: Schedule::Geometric { eps0: 1.0, ratio: 0.5, floor: 0.0 },
            steps: StepRule::Explicit { h: vec![1.0; 3] },
            max_n: 2,
            stop_residual: Some(0.0),
            track_oracle: false,
        };
        let hist = run_iteration(&p, p.data(), &Vector::zeros(3), &cfg).unwrap();
        let mut buf = Vec::new();
        hist.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "n,eps_n,h_n,residual_n,oracle_g_n,oracle_b_n");
        assert!(lines.next().unwrap().ends_with(",,"));
        assert_eq!(hist.steps.iter().map(|s| s.eps).collect::<Vec<_>>(), vec![1.0, 0.5, 0.25]);
    }
}
