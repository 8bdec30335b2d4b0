//! Dormand–Prince 5(4) with proportional step control, stepping exactly onto
//! a caller-supplied list of output times.

use crate::error::{invalid, DsmError, Result};
use crate::hilbert::Vector;


const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const MAX_STEPS: usize = 1_000_000;

/// Below this the error estimate is dominated by rounding.
pub const MIN_REL_TOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeOutput {
    /// State at each requested output time, in order.
    pub states: Vec<Vector>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

fn combo(y: &Vector, h: f64, terms: &[(f64, &Vector)]) -> Vector {
    let mut out = y.clone();
    for &(coef, k) in terms {
        if coef != 0.0 {
            out.axpy(h * coef, k);
        }
    }
    out
}

fn scaled_norm(err: &Vector, y: &Vector, y_new: &Vector, ctl: StepControl) -> f64 {
    let n = err.dim().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new.iter()))
        .map(|(e, (a, b))| {
            let sc = ctl.abs_tol + ctl.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<F>(f: &mut F, y0: &Vector, f0: &Vector, ctl: StepControl, span: f64) -> Result<f64>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    let sc_norm = |v: &Vector| scaled_norm(v, y0, y0, ctl);
    let d0 = sc_norm(y0);
    let d1 = sc_norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = combo(y0, h0, &[(1.0, f0)]);
    let f1 = f(&y1)?;
    let d2 = sc_norm(&(&f1 - f0)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Integrates the autonomous system `y′ = f(y)` from `t = 0`, returning the
/// state at each of `times` (nondecreasing, starting at or after 0).
pub fn integrate<F>(mut f: F, y0: &Vector, times: &[f64], ctl: StepControl) -> Result<OdeOutput>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    if !(ctl.rel_tol >= MIN_REL_TOL && ctl.abs_tol > 0.0) {
        return Err(invalid(
            "tolerances",
            format!("need rel_tol >= {MIN_REL_TOL:e} and abs_tol > 0"),
        ));
    }
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("times", "must be nonnegative and nondecreasing"));
    }
    let t_final = times.last().copied().unwrap_or(0.0);
    let h_min = 1e-14 * t_final.max(f64::MIN_POSITIVE);

    let mut t = 0.0;
    let mut y = y0.clone();
    let mut k1 = f(&y)?;
    let mut h = if t_final > 0.0 {
        initial_step(&mut f, &y, &k1, ctl, t_final)?
    } else {
        0.0
    };
    let mut states = Vec::with_capacity(times.len());
    let mut accepted = 0;
    let mut rejected = 0;

    for &target in times {
        while t < target {
            if accepted + rejected >= MAX_STEPS {
                return Err(DsmError::TooManySteps(MAX_STEPS));
            }
            let remaining = target - t;
            let clipped = h >= remaining;
            let step = if clipped { remaining } else { h };

            let k2 = f(&combo(&y, step, &[(A21, &k1)]))?;
            let k3 = f(&combo(&y, step, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = f(&combo(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
            let k5 = f(&combo(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
            let k6 = f(&combo(
                &y,
                step,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ))?;
            let y_new = combo(
                &y,
                step,
                &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
            );
            let k7 = f(&y_new)?;
            let err_vec = combo(
                &Vector::zeros(y.dim()),
                step,
                &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
            );
            let err = scaled_norm(&err_vec, &y, &y_new, ctl);
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };

            if err <= 1.0 {
                t = if clipped { target } else { t + step };
                y = y_new;
                k1 = k7;
                accepted += 1;
                // a clipped step says nothing about how large the next one may be
                h = if clipped { h.max(step * factor) } else { step * factor };
            } else {
                rejected += 1;
                h = step * factor.min(1.0);
                if h < h_min {
                    return Err(DsmError::StepSizeUnderflow { t, h });
                }
            }
            if !y.is_finite() {
                return Err(DsmError::NonFinite { context: "integrator state" });
            }
        }
        states.push(y.clone());
    }
    Ok(OdeOutput {
        states,
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CTL: StepControl = StepControl {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
    };

    #[test]
    fn exponential_decay() {
        let out = integrate(|y| Ok(-y), &Vector::new(vec![1.0]), &[0.0, 1.0, 2.0], CTL).unwrap();
        assert_eq!(out.states[0][0], 1.0);
        assert!((out.states[1][0] - (-1.0f64).exp()).abs() < 1e-9);
        assert!((out.states[2][0] - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_quarter_period() {
        let out = integrate(
            |y| Ok(Vector::new(vec![y[1], -y[0]])),
            &Vector::new(vec![1.0, 0.0]),
            &[std::f64::consts::FRAC_PI_2],
            CTL,
        )
        .unwrap();
        assert!(out.states[0][0].abs() < 1e-8);
        assert!((out.states[0][1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn fifth_order_convergence() {
        // Fixed comparison of two tolerances on y' = y²-free logistic y' = y(1-y).
        let exact = |t: f64| 1.0 / (1.0 + 9.0 * (-t).exp());
        let run = |tol: f64| {
            let ctl = StepControl {
                rel_tol: tol,
                abs_tol: tol * 1e-2,
            };
            let out = integrate(
                |y| Ok(y.map(|x| x * (1.0 - x))),
                &Vector::new(vec![0.1]),
                &[5.0],
                ctl,
            )
            .unwrap();
            (out.states[0][0] - exact(5.0)).abs()
        };
        let loose = run(1e-5);
        let tight = run(1e-8);
        assert!(tight < loose);
        assert!(tight < 1e-7);
    }

    #[test]
    fn rejects_bad_times() {
        assert!(integrate(|y| Ok(y.clone()), &Vector::new(vec![1.0]), &[1.0, 0.5], CTL).is_err());
        let bad = StepControl {
            rel_tol: 0.0,
            abs_tol: 1e-10,
        };
        assert!(integrate(|y| Ok(y.clone()), &Vector::new(vec![1.0]), &[1.0], bad).is_err());
    }

    #[test]
    fn propagates_rhs_errors() {
        let r = integrate(
            |_| Err(DsmError::NonFinite { context: "test" }),
            &Vector::new(vec![1.0]),
            &[1.0],
            CTL,
        );
        assert!(matches!(r, Err(DsmError::NonFinite { .. })));
    }
}
