//! Shifted linear solves `(A + εI)x = b`.
//!
//! When the symmetric part of `A` is positive semidefinite (which holds for
//! `A = B′(u)` with `B` monotone) one has `⟨(A+εI)x, x⟩ ≥ ε‖x‖²`, hence
//! `‖(A+εI)⁻¹‖ ≤ 1/ε`. Everything downstream leans on that bound.

use crate::error::{invalid, DsmError, Result};
use crate::hilbert::{DenseMatrix, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct RegSolveReport {
    pub solution: Vector,
    pub residual_norm: f64,
    pub epsilon: f64,
}

/// Residual tolerance accepted by [`reg_solve`].
pub fn solve_tolerance(b: &Vector) -> f64 {
    1e-10 * (1.0 + b.norm())
}

/// LU factorization with partial pivoting, `PA = LU`, unit lower triangle implied.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl LuFactors {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.dim();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let threshold = (n as f64) * f64::EPSILON * a.max_abs();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pivot > threshold) {
                return Err(DsmError::SingularMatrix { column: k, pivot });
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let l = lu[(i, k)] / d;
                lu[(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        lu[(i, j)] -= l * lu[(k, j)];
                    }
                }
            }
        }
        Ok(LuFactors { lu, perm })
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        let n = self.lu.dim();
        let mut x: Vector = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s: f64 = row[..i].iter().zip(&x.as_slice()[..i]).map(|(l, y)| l * y).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: f64 = row[i + 1..]
                .iter()
                .zip(&x.as_slice()[i + 1..])
                .map(|(u, y)| u * y)
                .sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }
}

/// Solves `(A + εI)x = b` by LU with partial pivoting plus up to two steps of
/// iterative refinement, and verifies the residual.
pub fn reg_solve(a: &DenseMatrix, epsilon: f64, b: &Vector) -> Result<RegSolveReport> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    if a.dim() != b.dim() {
        return Err(DsmError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let shifted = a.shifted(epsilon);
    let lu = LuFactors::factor(&shifted)?;
    let tolerance = solve_tolerance(b);

    let mut x = lu.solve(b);
    let mut r = b - &shifted.mul_vec(&x);
    let mut residual_norm = r.norm();
    for _ in 0..2 {
        if residual_norm <= tolerance {
            break;
        }
        let corrected = &x + &lu.solve(&r);
        let r_new = b - &shifted.mul_vec(&corrected);
        if r_new.norm() >= residual_norm {
            break;
        }
        x = corrected;
        r = r_new;
        residual_norm = r.norm();
    }
    if !x.is_finite() {
        return Err(DsmError::NonFinite { context: "regularized solve" });
    }
    if residual_norm > tolerance {
        return Err(DsmError::InaccurateSolve {
            residual: residual_norm,
            tolerance,
        });
    }
    Ok(RegSolveReport {
        solution: x,
        residual_norm,
        epsilon,
    })
}
