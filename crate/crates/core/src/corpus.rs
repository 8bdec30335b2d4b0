//! Built-in test problems and the noise model.
//!
//! | name                  | operator                         | minimal-norm oracle        |
//! |-----------------------|----------------------------------|----------------------------|
//! | `psd-singular-linear` | `QDQᵀu`, two zero eigenvalues    | pseudoinverse              |
//! | `hilbert-psd`         | Hilbert matrix                   | the generating `y*`        |
//! | `cubic-monotone`      | `Mu + u³` with `M` PSD           | `y*` (strictly monotone)   |
//! | `random-monotone`     | `GᵀGu + tanh(u)`                 | `y*` (strictly monotone)   |
//!
//! Every builder is a pure function of its [`CorpusSpec`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DsmError, Result};
use crate::hilbert::{DenseMatrix, LinearOperator, Operator, ProblemInstance, Vector};
use crate::reg_root::pseudoinverse_solve;

pub const PSD_SINGULAR_LINEAR: &str = "psd-singular-linear";
pub const HILBERT_PSD: &str = "hilbert-psd";
pub const CUBIC_MONOTONE: &str = "cubic-monotone";
pub const RANDOM_MONOTONE: &str = "random-monotone";

pub const REGISTERED: [&str; 4] = [PSD_SINGULAR_LINEAR, HILBERT_PSD, CUBIC_MONOTONE, RANDOM_MONOTONE];

pub const MAX_DIM: usize = 2000;

/// `max |tanh″|`, rounded up.
pub const TANH_SECOND_DERIVATIVE_BOUND: f64 = 0.77;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusParams {
    /// Generating solution; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_star: Option<Vec<f64>>,
    /// Smallest and largest nonzero eigenvalue (`psd-singular-linear`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_max: Option<f64>,
    /// Rank of the linear part (`cubic-monotone`, `random-monotone`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// Working radius `R` behind the `M₂` estimate (`cubic-monotone`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: CorpusParams,
}

impl CorpusSpec {
    pub fn named(name: &str) -> Self {
        CorpusSpec {
            name: name.to_string(),
            dim: None,
            seed: None,
            params: CorpusParams::default(),
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_y_star(mut self, y: Vec<f64>) -> Self {
        self.params.y_star = Some(y);
        self
    }

    pub fn default_dim(&self) -> Result<usize> {
        Ok(match self.name.as_str() {
            PSD_SINGULAR_LINEAR => 10,
            HILBERT_PSD => 12,
            CUBIC_MONOTONE => 4,
            RANDOM_MONOTONE => 10,
            other => return Err(DsmError::UnknownProblem(other.to_string())),
        })
    }

    pub fn resolved_dim(&self) -> Result<usize> {
        let default = self.default_dim()?;
        Ok(self
            .dim
            .or_else(|| self.params.y_star.as_ref().map(Vec::len))
            .unwrap_or(default))
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// `GᵀG / n` for a seeded Gaussian `G` with `rank` rows.
fn gram(rng: &mut ChaCha8Rng, rank: usize, n: usize) -> DenseMatrix {
    let g = gaussian_matrix(rng, rank, n);
    DenseMatrix::from_fn(n, |i, j| {
        (0..rank).map(|r| g[r][i] * g[r][j]).sum::<f64>() / n as f64
    })
}

fn seeded_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let g = gaussian_matrix(rng, n, n);
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| g[i][j]);
    DenseMatrix::from_nalgebra(&m.qr().q())
}

fn symmetrize(m: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(m.dim(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// `B(u) = Mu + u³` componentwise.
#[derive(Clone, Debug)]
pub struct CubicOperator {
    pub linear: DenseMatrix,
}

impl Operator for CubicOperator {
    fn apply(&self, u: &Vector) -> Vector {
        &self.linear.mul_vec(u) + &u.map(|x| x * x * x)
    }

    fn jacobian(&self, u: &Vector) -> Option<DenseMatrix> {
        let mut j = self.linear.clone();
        for i in 0..u.dim() {
            j[(i, i)] += 3.0 * u[i] * u[i];
        }
        Some(j)
    }
}

/// `B(u) = Gram·u + ∇Σ log cosh(u_i) = Gram·u + tanh(u)`.
#[derive(Clone, Debug)]
pub struct LogCoshOperator {
    pub gram: DenseMatrix,
}

impl Operator for LogCoshOperator {
    fn apply(&self, u: &Vector) -> Vector {
        &self.gram.mul_vec(u) + &u.map(f64::tanh)
    }

    fn jacobian(&self, u: &Vector) -> Option<DenseMatrix> {
        let mut j = self.gram.clone();
        for i in 0..u.dim() {
            let c = u[i].cosh();
            j[(i, i)] += 1.0 / (c * c);
        }
        Some(j)
    }
}

pub fn hilbert_matrix(n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, |i, j| 1.0 / (i + j + 1) as f64)
}

/// Builds a registered corpus problem.
pub fn build_problem(spec: &CorpusSpec) -> Result<ProblemInstance> {
    let n = spec.resolved_dim()?;
    if n == 0 || n > MAX_DIM {
        return Err(invalid("dim", format!("must lie in 1..={MAX_DIM}, got {n}")));
    }
    let y_star = Vector::new(spec.params.y_star.clone().unwrap_or_else(|| vec![1.0; n]));
    if y_star.dim() != n {
        return Err(DsmError::DimensionMismatch {
            expected: n,
            found: y_star.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(1));
    let p = &spec.params;

    match spec.name.as_str() {
        PSD_SINGULAR_LINEAR => {
            if n < 3 {
                return Err(invalid("dim", "psd-singular-linear needs dim >= 3"));
            }
            let lo = p.sigma_min.unwrap_or(0.1);
            let hi = p.sigma_max.unwrap_or(1.0);
            if !(lo > 0.0 && hi >= lo) {
                return Err(invalid("sigma", "need 0 < sigma_min <= sigma_max"));
            }
            let mut diag = vec![0.0, 0.0];
            let steps = (n - 3).max(1) as f64;
            diag.extend((0..n - 2).map(|k| lo + (hi - lo) * k as f64 / steps));
            let q = seeded_orthogonal(&mut rng, n);
            let m = symmetrize(&q.matmul(&DenseMatrix::diagonal(&diag)).matmul(&q.transpose()));
            let f = m.mul_vec(&y_star);
            let y = pseudoinverse_solve(&m, &f)?;
            ProblemInstance::new(PSD_SINGULAR_LINEAR, LinearOperator(m), f)?
                .with_known_solution(y)
        }
        HILBERT_PSD => {
            let m = hilbert_matrix(n);
            let f = m.mul_vec(&y_star);
            Ok(ProblemInstance::new(HILBERT_PSD, LinearOperator(m), f)?
                .with_known_solution(y_star)?
                .strictly_monotone(true))
        }
        CUBIC_MONOTONE => {
            let rank = p.rank.unwrap_or(n / 2);
            if rank > n {
                return Err(invalid("rank", "cannot exceed dim"));
            }
            let radius = p.radius.unwrap_or(2.0);
            if !(radius > 0.0) {
                return Err(invalid("radius", "must be positive"));
            }
            let op = CubicOperator { linear: gram(&mut rng, rank, n) };
            let f = op.apply(&y_star);
            let m2 = 6.0 * (radius + y_star.norm());
            let m1 = op.linear.norm_inf() + 3.0 * (radius + y_star.norm()).powi(2);
            Ok(ProblemInstance::new(CUBIC_MONOTONE, op, f)?
                .with_known_solution(y_star)?
                .with_bounds(Some(m1), Some(m2))
                .with_working_radius(radius)
                .strictly_monotone(true))
        }
        RANDOM_MONOTONE => {
            let rank = p.rank.unwrap_or(n / 2);
            if rank > n {
                return Err(invalid("rank", "cannot exceed dim"));
            }
            let op = LogCoshOperator { gram: gram(&mut rng, rank, n) };
            let f = op.apply(&y_star);
            let m1 = op.gram.norm_inf() + 1.0;
            let radius = p.radius.unwrap_or(10.0);
            Ok(ProblemInstance::new(RANDOM_MONOTONE, op, f)?
                .with_known_solution(y_star)?
                .with_bounds(Some(m1), Some(TANH_SECOND_DERIVATIVE_BOUND))
                .with_working_radius(radius)
                .strictly_monotone(true))
        }
        other => Err(DsmError::UnknownProblem(other.to_string())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub delta: f64,
    pub seed: u64,
}

/// A seeded Gaussian direction scaled to norm exactly `delta` (up to one rounding).
pub fn noise_perturbation(dim: usize, model: NoiseModel) -> Result<Vector> {
    if !(model.delta > 0.0) || !model.delta.is_finite() {
        return Err(invalid("delta", "must be positive"));
    }
    let mut seed = model.seed;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta: Vector = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = eta.norm();
        if norm > 0.0 {
            return Ok(eta.scaled(model.delta / norm));
        }
        seed = seed.wrapping_add(1);
    }
}

/// `f + δ·η/‖η‖` with `η` standard normal.
pub fn add_noise(f: &Vector, model: NoiseModel) -> Result<Vector> {
    Ok(f + &noise_perturbation(f.dim(), model)?)
}

/// Reproducible JSON-ready description of a problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemDescription {
    pub name: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: CorpusParams,
    /// Row-major entries, for linear problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    pub data: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_solution: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m2_bound: Option<f64>,
}

pub fn describe(spec: &CorpusSpec, problem: &ProblemInstance) -> ProblemDescription {
    ProblemDescription {
        name: problem.name().to_string(),
        dim: problem.dim(),
        seed: spec.seed,
        params: spec.params.clone(),
        matrix: problem.matrix().map(DenseMatrix::rows),
        data: problem.data().as_slice().to_vec(),
        known_solution: problem.known_solution().map(|y| y.as_slice().to_vec()),
        m2_bound: problem.m2_bound(),
    }
}

/// Rebuilds a problem from its description.
///
/// Registered names are rebuilt from `(name, dim, seed, params)` and the stored
/// data must match bit for bit. Other names need explicit matrix entries and
/// become generic linear problems.
pub fn load_description(desc: &ProblemDescription) -> Result<ProblemInstance> {
    if REGISTERED.contains(&desc.name.as_str()) {
        let spec = CorpusSpec {
            name: desc.name.clone(),
            dim: Some(desc.dim),
            seed: desc.seed,
            params: desc.params.clone(),
        };
        let p = build_problem(&spec)?;
        if p.data().as_slice() != desc.data.as_slice() {
            return Err(invalid("data", "does not match the rebuilt corpus problem"));
        }
        return Ok(p);
    }
    let rows = desc
        .matrix
        .as_ref()
        .ok_or(DsmError::Missing("matrix entries for a non-corpus problem"))?;
    let m = DenseMatrix::from_rows(rows)?;
    if m.dim() != desc.dim {
        return Err(DsmError::DimensionMismatch {
            expected: desc.dim,
            found: m.dim(),
        });
    }
    let f = Vector::new(desc.data.clone());
    let y = match &desc.known_solution {
        Some(y) => Vector::new(y.clone()),
        None => pseudoinverse_solve(&m, &f)?,
    };
    ProblemInstance::new(desc.name.clone(), LinearOperator(m), f)?.with_known_solution(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reg_root::kernel_basis;

    #[test]
    fn singular_linear_drops_kernel_part() {
        let p = build_problem(&CorpusSpec::named(PSD_SINGULAR_LINEAR)).unwrap();
        let y = p.known_solution().unwrap();
        let y_star = Vector::filled(10, 1.0);
        assert!(y.norm() < y_star.norm());
        let kernel = kernel_basis(p.matrix().unwrap());
        assert_eq!(kernel.len(), 2);
        for k in &kernel {
            assert!(k.inner(y).abs() < 1e-9);
        }
    }

    #[test]
    fn hilbert_is_numerically_singular() {
        let p = build_problem(&CorpusSpec::named(HILBERT_PSD)).unwrap();
        assert_eq!(p.dim(), 12);
        assert!(p.matrix().unwrap().condition_number() > 1e15);
    }

    #[test]
    fn scalar_pure_cubic() {
        let spec = CorpusSpec {
            name: CUBIC_MONOTONE.into(),
            dim: Some(1),
            seed: None,
            params: CorpusParams { rank: Some(0), ..CorpusParams::default() },
        };
        let p = build_problem(&spec).unwrap();
        assert_eq!(p.data().as_slice(), &[1.0]);
        assert_eq!(p.known_solution().unwrap().as_slice(), &[1.0]);
        assert_eq!(p.jacobian(&Vector::zeros(1)).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn unknown_name_and_bad_dim() {
        assert!(matches!(
            build_problem(&CorpusSpec::named("nope")),
            Err(DsmError::UnknownProblem(_))
        ));
        assert!(build_problem(&CorpusSpec::named(HILBERT_PSD).with_dim(0)).is_err());
        assert!(build_problem(&CorpusSpec::named(HILBERT_PSD).with_dim(MAX_DIM + 1)).is_err());
    }

    #[test]
    fn noise_has_exact_norm() {
        let h = noise_perturbation(7, NoiseModel { delta: 1e-3, seed: 5 }).unwrap();
        assert!((h.norm() - 1e-3).abs() <= 1e-15 * 1e-3);
    }

    #[test]
    fn noise_is_deterministic_and_seed_dependent() {
        let f = Vector::filled(6, 2.0);
        let a = add_noise(&f, NoiseModel { delta: 1e-2, seed: 1 }).unwrap();
        let b = add_noise(&f, NoiseModel { delta: 1e-2, seed: 1 }).unwrap();
        let c = add_noise(&f, NoiseModel { delta: 1e-2, seed: 2 }).unwrap();
        assert_eq!(a, b);
        let (da, dc) = (&a - &f, &c - &f);
        let cos = da.inner(&dc) / (da.norm() * dc.norm());
        assert!(cos.abs() < 0.99);
    }

    #[test]
    fn description_round_trip() {
        let spec = CorpusSpec::named(PSD_SINGULAR_LINEAR).with_seed(3);
        let p = build_problem(&spec).unwrap();
        let desc = describe(&spec, &p);
        let back = load_description(&desc).unwrap();
        assert_eq!(back.data(), p.data());
        assert_eq!(back.matrix(), p.matrix());

        let mut generic = desc.clone();
        generic.name = "my-linear".into();
        let q = load_description(&generic).unwrap();
        assert_eq!(q.matrix(), p.matrix());

        let mut tampered = desc;
        tampered.data[0] += 1.0;
        assert!(load_description(&tampered).is_err());
    }
}
