//! Small dense linear algebra on row-major `Vec`s.
//!
//! Systems here are at most a few hundred unknowns (tabular Bellman systems,
//! per-action feature blocks), so straightforward O(n³) routines suffice.

use crate::error::{PspoError, Result};
use crate::scalar::Scalar;

/// Solves `A x = b` for square row-major `A` by Gaussian elimination with
/// partial pivoting.
pub fn solve<F: Scalar>(a: &[F], b: &[F], n: usize) -> Result<Vec<F>> {
    if a.len() != n * n || b.len() != n {
        return Err(PspoError::DimensionMismatch(format!("solve: matrix {} / rhs {} for n = {n}", a.len(), b.len())));
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                m[i * n + col].abs().partial_cmp(&m[j * n + col].abs()).unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        let p = m[pivot * n + col];
        if p.abs() <= F::min_positive_value() || !p.is_finite() {
            return Err(PspoError::Singular);
        }
        if pivot != col {
            for k in 0..n {
                m.swap(pivot * n + k, col * n + k);
            }
            x.swap(pivot, col);
        }
        for row in col + 1..n {
            let factor = m[row * n + col] / p;
            if factor == F::zero() {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[row * n + k] -= factor * v;
            }
            let xc = x[col];
            x[row] -= factor * xc;
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in col + 1..n {
            acc -= m[col * n + k] * x[k];
        }
        x[col] = acc / m[col * n + col];
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` where column `k` of the row-major
/// eigenvector matrix pairs with `eigenvalues[k]`.
pub fn symmetric_eigen<F: Scalar>(a: &[F], n: usize) -> (Vec<F>, Vec<F>) {
    let mut m = a.to_vec();
    let mut v = vec![F::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = F::one();
    }
    let eps = F::epsilon();
    for _sweep in 0..100 {
        let mut off = F::zero();
        let mut diag = F::zero();
        for i in 0..n {
            diag += m[i * n + i] * m[i * n + i];
            for j in 0..n {
                if i != j {
                    off += m[i * n + j] * m[i * n + j];
                }
            }
        }
        if off <= eps * eps * diag || off == F::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == F::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (F::two() * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + F::one()).sqrt());
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

/// Result of applying a Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct PinvApply<F> {
    pub x: Vec<F>,
    /// Ratio of the largest to the smallest retained eigenvalue.
    pub condition: F,
    /// Number of eigenvalues treated as zero.
    pub null_dim: usize,
}

/// Computes `A⁺ b` for symmetric positive semi-definite `A`.
pub fn pinv_apply_symmetric<F: Scalar>(a: &[F], b: &[F], n: usize, rel_tol: F) -> PinvApply<F> {
    let (vals, vecs) = symmetric_eigen(a, n);
    let max = vals.iter().fold(F::zero(), |m, &v| m.max(v.abs()));
    let cutoff = max * rel_tol;
    let mut x = vec![F::zero(); n];
    let mut min_kept = F::infinity();
    let mut null_dim = 0;
    for k in 0..n {
        let lam = vals[k];
        if lam.abs() <= cutoff || lam == F::zero() {
            null_dim += 1;
            continue;
        }
        min_kept = min_kept.min(lam.abs());
        let proj: F = (0..n).map(|i| vecs[i * n + k] * b[i]).sum();
        let coef = proj / lam;
        for i in 0..n {
            x[i] += coef * vecs[i * n + k];
        }
    }
    let condition = if min_kept.is_finite() { max / min_kept } else { F::infinity() };
    PinvApply { x, condition, null_dim }
}
