//! Soft (log-sum-exp) state values and KL divergences between policy rows.

use super::{QFunction, SoftPolicy};
use crate::error::{PspoError, Result};
use crate::scalar::{weighted_log_sum_exp, Scalar};

/// `α log Σ_a μ(a) exp(q(a)/α)` for a single row.
///
/// `alpha == 0` is the limit `max_{a ∈ supp μ} q(a)`.
pub fn soft_value_row<F: Scalar>(q: &[F], reference: &[F], alpha: F) -> F {
    if alpha == F::zero() {
        return q.iter().zip(reference).filter(|(_, &m)| m > F::zero()).fold(F::neg_infinity(), |m, (&v, _)| m.max(v));
    }
    let scaled: Vec<F> = q.iter().map(|&v| v / alpha).collect();
    alpha * weighted_log_sum_exp(reference, &scaled)
}

/// Soft value `V_Q(s) = α log E_{a∼μ(·|s)} exp(Q(s,a)/α)`.
pub fn soft_value<F: Scalar>(q: &QFunction<F>, reference: &SoftPolicy<F>, alpha: F, state: usize) -> F {
    soft_value_row(q.row(state), reference.row(state), alpha)
}

/// `Σ_a p(a) ln(p(a)/q(a))` with `0 ln 0 = 0`. A support violation
/// returns the offending action as the error.
pub fn kl_divergence_rows<F: Scalar>(p: &[F], q: &[F]) -> std::result::Result<F, usize> {
    let mut kl = F::zero();
    for (a, (&pa, &qa)) in p.iter().zip(q).enumerate() {
        if pa <= F::zero() {
            continue;
        }
        if qa <= F::zero() {
            return Err(a);
        }
        kl += pa * (pa / qa).ln();
    }
    Ok(kl.max(F::zero()))
}

/// `D_KL(p(·|s) ‖ q(·|s))` in nats.
pub fn kl_divergence<F: Scalar>(p: &SoftPolicy<F>, q: &SoftPolicy<F>, state: usize) -> Result<F> {
    if p.n_actions() != q.n_actions() || state >= p.n_states() || state >= q.n_states() {
        return Err(PspoError::DimensionMismatch("KL between policies".into()));
    }
    kl_divergence_rows(p.row(state), q.row(state)).map_err(|action| PspoError::InfiniteKl { state, action })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Table;

    fn q_row(vals: &[f64]) -> QFunction<f64> {
        QFunction::new(Table::from_flat(1, vals.len(), vals.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn constant_row_pulls_through() {
        let mu = SoftPolicy::new(Table::from_flat(1, 3, vec![0.2, 0.3, 0.5]).unwrap()).unwrap();
        let v = soft_value(&q_row(&[1.7, 1.7, 1.7]), &mu, 0.37, 0);
        assert!((v - 1.7).abs() < 1e-14);
    }

    #[test]
    fn log_two_example() {
        let mu = SoftPolicy::<f64>::uniform(1, 2);
        let v = soft_value(&q_row(&[0.0, 3.0f64.ln()]), &mu, 1.0, 0);
        assert!((v - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn shift_equivariance() {
        let mu = SoftPolicy::new(Table::from_flat(1, 3, vec![0.1, 0.6, 0.3]).unwrap()).unwrap();
        let q = q_row(&[0.3, -1.2, 2.5]);
        let v0 = soft_value(&q, &mu, 0.5, 0);
        let v1 = soft_value(&q.shifted(4.25), &mu, 0.5, 0);
        assert!((v1 - v0 - 4.25).abs() < 1e-12);
    }

    #[test]
    fn alpha_limits() {
        let mu = SoftPolicy::new(Table::from_flat(1, 3, vec![0.2, 0.5, 0.3]).unwrap()).unwrap();
        let q = q_row(&[0.4, -0.3, 0.9]);
        let max = 0.9;
        let mean = 0.2 * 0.4 - 0.5 * 0.3 + 0.3 * 0.9;
        assert!((soft_value(&q, &mu, 1e-3, 0) - max).abs() < 1e-2);
        assert!((soft_value(&q, &mu, 1e3, 0) - mean).abs() < 1e-2);
        assert_eq!(soft_value(&q, &mu, 0.0, 0), max);
    }

    #[test]
    fn kl_examples() {
        let p = SoftPolicy::new(Table::from_flat(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        let q = SoftPolicy::<f64>::uniform(1, 2);
        assert_eq!(kl_divergence(&q, &q, 0).unwrap(), 0.0);
        assert!((kl_divergence(&p, &q, 0).unwrap() - 2.0f64.ln()).abs() < 1e-15);
        assert!(matches!(kl_divergence(&q, &p, 0), Err(PspoError::InfiniteKl { state: 0, action: 1 })));
    }
}
