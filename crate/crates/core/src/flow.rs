//! The regularized Newton flow
//!
//! ```text
//! u̇ = −(B′(u) + εI)⁻¹ (B(u) + εu − f),   u(0) = u₀
//! ```
//!
//! Writing `F(u) = B(u) + εu − f` and `g(t) = ‖F(u(t))‖`, the flow is built so
//! that `d/dt F(u) = (B′(u) + εI) u̇ = −F(u)`. Hence `g(t) = g₀ e^{−t}` exactly,
//! for any monotone `B` and any starting point. Combined with
//! `‖(B′+εI)⁻¹‖ ≤ 1/ε` this gives `‖u̇‖ ≤ g₀ ε⁻¹ e^{−t}`, so `u(t)` converges to
//! the regularized root `V_ε` with `‖u(t) − V_ε‖ ≤ g₀ ε⁻¹ e^{−t}`.
//!
//! Stopping at `t_ε = −2 ln ε` turns that into `‖u(t_ε) − V_ε‖ ≤ g₀ ε`, and
//! since `V_ε → y` as `ε → 0` the stopped state converges to the minimal-norm
//! solution. With noisy data the same flow is run on `f_δ` with `ε = δ^b`.
//!
//! The decay law is checked at every checkpoint. It does not depend on the
//! problem, which makes it the main correctness oracle for the integrator.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::checks::{BoundCheck, BOUND_SLACK};
use crate::error::{invalid, Result};
use crate::hilbert::{ProblemInstance, Vector};
use crate::ode::{self, StepControl};
use crate::reg_linear::reg_solve;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowTolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Equispaced output times including 0 and `t_end`; at least 2.
    pub checkpoint_count: usize,
    /// Allowed `|g(t) / (g₀e^{−t}) − 1|` before a checkpoint is flagged.
    pub decay_tol: f64,
}

impl Default for FlowTolerances {
    fn default() -> Self {
        FlowTolerances {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            checkpoint_count: 10,
            decay_tol: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowConfig {
    pub epsilon: f64,
    pub t_end: f64,
    pub tolerances: FlowTolerances,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(invalid("t_end", "must be positive and finite"));
        }
        let t = &self.tolerances;
        if !(t.rel_tol > 0.0 && t.abs_tol > 0.0 && t.decay_tol > 0.0) {
            return Err(invalid("tolerances", "must be positive"));
        }
        if t.checkpoint_count < 2 {
            return Err(invalid("checkpoint_count", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Checkpoint {
    pub t: f64,
    pub u: Vector,
    /// `‖B(u) + εu − f‖`
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowTrajectory {
    pub epsilon: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub g0: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Largest `|g(t)/(g₀e^{−t}) − 1|` over the checkpoints.
    pub max_decay_deviation: f64,
    /// Checkpoints whose deviation exceeds `decay_tol`.
    pub decay_violations: usize,
}

impl FlowTrajectory {
    pub fn final_state(&self) -> &Vector {
        &self.checkpoints.last().expect("at least two checkpoints").u
    }

    pub fn decay_law_holds(&self) -> bool {
        self.decay_violations == 0
    }

    pub fn decay_check(&self, decay_tol: f64) -> BoundCheck {
        BoundCheck::new(
            "decay-law",
            "|g(t)/(g0*exp(-t)) - 1| <= tol",
            self.max_decay_deviation,
            decay_tol,
            1.0,
        )
    }

    /// `‖u(t) − V_ε‖ ≤ g₀ ε⁻¹ e^{−t}` at every checkpoint.
    pub fn trajectory_bound(&self, v_eps: &Vector) -> BoundCheck {
        let relation = "||u(t) - V_eps|| <= g0/eps*exp(-t)";
        BoundCheck::worst_of(
            "trajectory-bound",
            relation,
            self.checkpoints.iter().map(|c| {
                let rhs = self.g0 / self.epsilon * (-c.t).exp();
                BoundCheck::new("trajectory-bound", relation, c.u.distance(v_eps), rhs, BOUND_SLACK)
            }),
        )
    }

    /// Writes `t, g, u_0, …, u_{n−1}` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let dim = self.checkpoints.first().map_or(0, |c| c.u.dim());
        let mut header = vec!["t".to_string(), "g".to_string()];
        header.extend((0..dim).map(|i| format!("u_{i}")));
        w.write_record(&header)?;
        for c in &self.checkpoints {
            let mut row = vec![full_precision(c.t), full_precision(c.g)];
            row.extend(c.u.iter().map(|&x| full_precision(x)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn full_precision(x: f64) -> String {
    format!("{x:.16e}")
}

/// `Φ(u) = −(B′(u) + εI)⁻¹ (B(u) + εu − f_active)`.
pub fn rhs(problem: &ProblemInstance, f_active: &Vector, epsilon: f64, u: &Vector) -> Result<Vector> {
    let residual = problem.regularized_residual(f_active, epsilon, u)?;
    let jac = problem.jacobian(u)?;
    Ok(-&reg_solve(&jac, epsilon, &residual)?.solution)
}

fn checkpoint_times(t_end: f64, count: usize) -> Vec<f64> {
    let last = (count - 1) as f64;
    (0..count)
        .map(|k| if k + 1 == count { t_end } else { t_end * k as f64 / last })
        .collect()
}

/// Integrates the flow from `u0` with right-hand side `f_active` up to `config.t_end`.
///
/// Decay-law deviations beyond `decay_tol` are counted in the trajectory, not raised.
pub fn integrate_flow(
    problem: &ProblemInstance,
    f_active: &Vector,
    config: &FlowConfig,
    u0: &Vector,
) -> Result<FlowTrajectory> {
    config.validate()?;
    problem.check_dim(f_active)?;
    problem.check_dim(u0)?;
    let eps = config.epsilon;
    let tol = config.tolerances;
    let times = checkpoint_times(config.t_end, tol.checkpoint_count);
    let out = ode::integrate(
        |u| rhs(problem, f_active, eps, u),
        u0,
        &times,
        StepControl {
            rel_tol: tol.rel_tol,
            abs_tol: tol.abs_tol,
        },
    )?;

    let g0 = problem.regularized_residual(f_active, eps, u0)?.norm();
    let mut checkpoints = Vec::with_capacity(times.len());
    let mut max_dev: f64 = 0.0;
    let mut violations = 0;
    for (&t, u) in times.iter().zip(out.states) {
        let g = problem.regularized_residual(f_active, eps, &u)?.norm();
        let dev = if g0 > 0.0 {
            (g / (g0 * (-t).exp()) - 1.0).abs()
        } else {
            0.0
        };
        if dev > tol.decay_tol {
            violations += 1;
        }
        max_dev = max_dev.max(dev);
        checkpoints.push(Checkpoint { t, u, g });
    }
    Ok(FlowTrajectory {
        epsilon: eps,
        checkpoints,
        g0,
        accepted_steps: out.accepted_steps,
        rejected_steps: out.rejected_steps,
        max_decay_deviation: max_dev,
        decay_violations: violations,
    })
}

/// `t_ε = −2 ln ε`, defined for `0 < ε < 1`.
pub fn stopping_time(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("epsilon", format!("stopping time needs 0 < eps < 1, got {epsilon}")));
    }
    Ok(-2.0 * epsilon.ln())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DsmSolution {
    pub u_final: Vector,
    pub trajectory: FlowTrajectory,
}

impl DsmSolution {
    /// `‖u(t_ε) − V_ε‖ ≤ g₀ ε`.
    pub fn stopping_bound(&self, v_eps: &Vector) -> BoundCheck {
        BoundCheck::new(
            "stopping-bound",
            "||u(t_eps) - V_eps|| <= g0*eps",
            self.u_final.distance(v_eps),
            self.trajectory.g0 * self.trajectory.epsilon,
            BOUND_SLACK,
        )
    }
}

/// Runs the flow on the exact data up to the stopping time `−2 ln ε`.
pub fn solve_dsm(
    problem: &ProblemInstance,
    epsilon: f64,
    u0: &Vector,
    tolerances: FlowTolerances,
) -> Result<DsmSolution> {
    let config = FlowConfig {
        epsilon,
        t_end: stopping_time(epsilon)?,
        tolerances,
    };
    let trajectory = integrate_flow(problem, problem.data(), &config, u0)?;
    Ok(DsmSolution {
        u_final: trajectory.final_state().clone(),
        trajectory,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoisySolution {
    pub w_final: Vector,
    pub epsilon_used: f64,
    pub stopping_time: f64,
    pub trajectory: FlowTrajectory,
}

impl NoisySolution {
    /// `‖w_δ(t_δ) − W_δ‖ ≤ g₀δ ε` where `W_δ` is the regularized root for the noisy data.
    pub fn stopping_bound(&self, w_root: &Vector) -> BoundCheck {
        BoundCheck::new(
            "noisy-stopping-bound",
            "||w_delta(t_delta) - W_delta|| <= g0_delta*eps",
            self.w_final.distance(w_root),
            self.trajectory.g0 * self.epsilon_used,
            BOUND_SLACK,
        )
    }
}

/// The noisy-data stopping rule: `ε = δ^b`, run the flow on `f_noisy` to `t = −2 ln ε`.
pub fn solve_dsm_noisy(
    problem: &ProblemInstance,
    f_noisy: &Vector,
    delta: f64,
    b_exp: f64,
    u0: &Vector,
    tolerances: FlowTolerances,
) -> Result<NoisySolution> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    if !(b_exp > 0.0 && b_exp < 1.0) {
        return Err(invalid("b_exp", format!("must lie in (0, 1), got {b_exp}")));
    }
    let epsilon = delta.powf(b_exp);
    let t_stop = stopping_time(epsilon)?;
    let config = FlowConfig {
        epsilon,
        t_end: t_stop,
        tolerances,
    };
    let trajectory = integrate_flow(problem, f_noisy, &config, u0)?;
    Ok(NoisySolution {
        w_final: trajectory.final_state().clone(),
        epsilon_used: epsilon,
        stopping_time: t_stop,
        trajectory,
    })
}
