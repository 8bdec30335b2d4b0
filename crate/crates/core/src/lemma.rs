//! The convergence recursion `g_{n+1} ≤ (1 − a_n) g_n + b_n`.
//!
//! With `0 < a_n ≤ ½`, `b_n ≥ 0`, `b_n → 0`, `Σ a_n = ∞` and vanishing
//! weighted tails `Σ_{k<n} b_k exp(−Σ_{j=k+1}^n a_j) → 0`, every sequence
//! obeying the recursion tends to zero. Unrolling the equality version gives
//!
//! ```text
//! g_{n+1} = b_n + Σ_{k=1}^{n−1} b_k Π_{j=k+1}^n (1 − a_j) + g_1 Π_{j=1}^n (1 − a_j)
//! ```
//!
//! and `1 − a ≤ e^{−a}` turns the products into the exponential majorant.
//!
//! Limits cannot be decided from finitely many terms, so
//! [`check_lemma_conditions`] reports partial sums and labeled finite-horizon
//! trends instead of verdicts.
//!
//! Indices are 1-based in the formulas: `a[0]` is `a_1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

fn validate_terms(a: &[f64], b: &[f64], a_max: f64) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid("a, b", format!("lengths differ ({} vs {})", a.len(), b.len())));
    }
    if let Some((k, x)) = a.iter().enumerate().find(|(_, &x)| !(x > 0.0 && x <= a_max)) {
        return Err(invalid("a", format!("a_{} = {x} outside (0, {a_max}]", k + 1)));
    }
    if let Some((k, x)) = b.iter().enumerate().find(|(_, &x)| !(x >= 0.0 && x.is_finite())) {
        return Err(invalid("b", format!("b_{} = {x} is not a nonnegative number", k + 1)));
    }
    Ok(())
}

fn validate_g1(g1: f64) -> Result<()> {
    if !(g1 >= 0.0 && g1.is_finite()) {
        return Err(invalid("g1", "must be nonnegative"));
    }
    Ok(())
}

/// Iterates `g_{n+1} = (1 − a_n) g_n + b_n` from `g_1`. The result has
/// `a.len() + 1` entries, `g_1` first.
pub fn simulate_recursion(g1: f64, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    validate_g1(g1)?;
    validate_terms(a, b, 0.5)?;
    let mut g = Vec::with_capacity(a.len() + 1);
    g.push(g1);
    for (an, bn) in a.iter().zip(b) {
        let last = *g.last().unwrap();
        g.push((1.0 - an) * last + bn);
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InductionBound {
    /// The unrolled product form, a bound on `g_{n+1}`.
    pub bound: f64,
    /// Same with `Π(1 − a_j)` replaced by `exp(−Σ a_j)`.
    pub majorant: f64,
}

/// The unrolled bound on `g_{n+1}` for `1 ≤ n ≤ a.len()`.
pub fn induction_bound(g1: f64, a: &[f64], b: &[f64], n: usize) -> Result<InductionBound> {
    validate_g1(g1)?;
    validate_terms(a, b, 0.5)?;
    if n == 0 || n > a.len() {
        return Err(invalid("n", format!("must lie in 1..={}", a.len())));
    }
    // a_j is a[j - 1]
    let product = |from: usize| -> f64 { (from..=n).map(|j| 1.0 - a[j - 1]).product() };
    let exp_sum = |from: usize| -> f64 { (-(from..=n).map(|j| a[j - 1]).sum::<f64>()).exp() };

    let mut bound = b[n - 1] + g1 * product(1);
    let mut majorant = b[n - 1] + g1 * exp_sum(1);
    for k in 1..n {
        bound += b[k - 1] * product(k + 1);
        majorant += b[k - 1] * exp_sum(k + 1);
    }
    Ok(InductionBound { bound, majorant })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecursionTrace {
    pub g1: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `g_1, …, g_{N+1}` from the equality recursion.
    pub g: Vec<f64>,
    /// `bound[i]` and `majorant[i]` bound `g[i + 1]`.
    pub bound: Vec<f64>,
    pub majorant: Vec<f64>,
}

impl RecursionTrace {
    pub fn new(g1: f64, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let g = simulate_recursion(g1, &a, &b)?;
        let (bound, majorant) = (1..=a.len())
            .map(|n| induction_bound(g1, &a, &b, n).map(|ib| (ib.bound, ib.majorant)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(RecursionTrace { g1, a, b, g, bound, majorant })
    }

    /// Largest violation of `g_{n+1} ≤ bound_n ≤ majorant_n` (nonpositive when both hold).
    pub fn worst_excess(&self) -> f64 {
        self.bound
            .iter()
            .zip(&self.majorant)
            .zip(&self.g[1..])
            .map(|((b, m), g)| (g - b).max(b - m))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `g_{n+1} ≤ bound_n ≤ majorant_n` for every `n`, each up to `slack·max(1, rhs)`.
    pub fn certified(&self, slack: f64) -> bool {
        let le = |x: f64, y: f64| x <= y + slack * y.abs().max(1.0);
        self.bound
            .iter()
            .zip(&self.majorant)
            .zip(&self.g[1..])
            .all(|((&b, &m), &g)| le(g, b) && le(b, m))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionsReport {
    pub horizon: usize,
    /// `Σ_{n=1}^{N} a_n` for `N = 1..=horizon`.
    pub partial_sums: Vec<f64>,
    /// `T(n) = Σ_{k=1}^{n−1} b_k exp(−Σ_{j=k+1}^n a_j)` for `n = 2..=horizon`.
    pub tail_sums: Vec<f64>,
    pub tail_sum: f64,
    /// Heuristic: the increment of the partial sums over `(H/2, H]` is at
    /// least 90% of the increment over `(H/4, H/2]`, as for `Σ 1/k` and slower.
    pub divergent_trend: bool,
    /// Heuristic: `T(n)` is nonincreasing over the last half of the horizon.
    pub tail_decreasing: bool,
}

/// Finite-horizon diagnostics for `Σ a_n = ∞` and the weighted-tail condition.
///
/// Only positivity of `a` is required here; the `a_n ≤ ½` restriction belongs
/// to the recursion itself.
pub fn check_lemma_conditions(a: &[f64], b: &[f64], horizon: usize) -> Result<ConditionsReport> {
    if horizon < 2 {
        return Err(invalid("horizon", "must be at least 2"));
    }
    if a.len() < horizon || b.len() < horizon {
        return Err(invalid("horizon", "exceeds the supplied sequences"));
    }
    let (a, b) = (&a[..horizon], &b[..horizon]);
    validate_terms(a, b, f64::INFINITY)?;

    let partial_sums: Vec<f64> = a
        .iter()
        .scan(0.0, |s, x| {
            *s += x;
            Some(*s)
        })
        .collect();
    // T(n+1) = e^{−a_{n+1}} (T(n) + b_n), T(1) = 0
    let mut tail_sums = Vec::with_capacity(horizon - 1);
    let mut t = 0.0;
    for n in 1..horizon {
        t = (-a[n]).exp() * (t + b[n - 1]);
        tail_sums.push(t);
    }

    let s = |n: usize| if n == 0 { 0.0 } else { partial_sums[n - 1] };
    let (q, h) = (horizon / 4, horizon / 2);
    let late = s(horizon) - s(h);
    let early = s(h) - s(q);
    let divergent_trend = early > 0.0 && late >= 0.9 * early;
    // tail_sums[i] is T(i + 2)
    let from = h.saturating_sub(2);
    let tail_decreasing = tail_sums[from..].windows(2).all(|w| w[1] <= w[0]);

    Ok(ConditionsReport {
        horizon,
        tail_sum: *tail_sums.last().unwrap(),
        partial_sums,
        tail_sums,
        divergent_trend,
        tail_decreasing,
    })
}

/// `Σ_{k=1}^{n−1} b_k p^{k−n}`: the weighted tail when `a_j = ln p` for all `j`.
pub fn weighted_tail_constant_p(b: &[f64], p: f64, n: usize) -> f64 {
    (1..n).map(|k| b[k - 1] * p.powi(k as i32 - n as i32)).sum()
}

/// Named sequence families, indexed from `k = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceSpec {
    Zero,
    Constant { value: f64 },
    /// `ln p` for every `k`.
    LogP { p: f64 },
    /// `scale / k`
    Harmonic { scale: f64 },
    /// `scale / k²`
    InverseSquare { scale: f64 },
    /// `scale · ratio^k`
    Geometric { scale: f64, ratio: f64 },
    Explicit { values: Vec<f64> },
}

impl SequenceSpec {
    pub fn generate(&self, len: usize) -> Result<Vec<f64>> {
        let terms: Vec<f64> = match self {
            SequenceSpec::Zero => vec![0.0; len],
            SequenceSpec::Constant { value } => vec![*value; len],
            SequenceSpec::LogP { p } => vec![p.ln(); len],
            SequenceSpec::Harmonic { scale } => (1..=len).map(|k| scale / k as f64).collect(),
            SequenceSpec::InverseSquare { scale } => {
                (1..=len).map(|k| scale / (k * k) as f64).collect()
            }
            SequenceSpec::Geometric { scale, ratio } => {
                (1..=len).map(|k| scale * ratio.powi(k as i32)).collect()
            }
            SequenceSpec::Explicit { values } => {
                if values.len() < len {
                    return Err(invalid("values", format!("need {len} terms, got {}", values.len())));
                }
                values[..len].to_vec()
            }
        };
        Ok(terms)
    }
}

/// A random admissible triple: `g1 ∈ [0, 10)`, `a_j ∈ [1e-6, ½]`, `b_j ∈ [0, 1)`, length `1..=max_len`.
pub fn random_admissible<R: Rng>(rng: &mut R, max_len: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let n = rng.random_range(1..=max_len.max(1));
    let g1 = rng.random_range(0.0..10.0);
    let a = (0..n).map(|_| rng.random_range(1e-6..=0.5)).collect();
    let b = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    (g1, a, b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub trials: usize,
    pub failures: usize,
    /// Largest `g − bound` or `bound − majorant` seen; nonpositive when all hold.
    pub worst_excess: f64,
}

/// Certifies `g ≤ bound ≤ majorant` on `trials` seeded random admissible triples.
pub fn random_certificates(trials: usize, seed: u64, max_len: usize, slack: f64) -> Result<CertificateSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let (g1, a, b) = random_admissible(&mut rng, max_len);
        let trace = RecursionTrace::new(g1, a, b)?;
        worst = worst.max(trace.worst_excess());
        if !trace.certified(slack) {
            failures += 1;
        }
    }
    Ok(CertificateSummary { trials, failures, worst_excess: worst })
}
