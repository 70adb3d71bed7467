//! Closed-form soft-optimal policies and the KL trust-region step.
//!
//! The trust-region solution has the form
//! `π(a|s) ∝ μ(a|s)^{α/(α+λ)} π_i(a|s)^{λ/(α+λ)} exp(Q(s,a)/(α+λ))`.
//! Writing `t = 1/(α+λ)` this is the exponential tilt
//! `π_t ∝ π_i exp(t·g)` with `g = Q + α(log μ − log π_i)`, whose KL to `π_i`
//! grows monotonically in `t` (its derivative is `t·Var_{π_t}(g)`). The step
//! therefore bisects on `t ∈ (0, 1/α]`; `t = 1/α` is the unconstrained
//! optimum `λ = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{PspoError, Result};
use crate::mdp::{kl_divergence_rows, QFunction, SoftPolicy, Table};
use crate::scalar::Scalar;

const BISECTION_ITERS: usize = 200;

/// How per-state KL values are combined into the trust-region constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlAggregation {
    /// Largest per-state KL.
    #[default]
    Max,
    /// Weighted mean with caller-supplied state weights.
    WeightedMean,
}

/// `π*(a|s) ∝ μ(a|s) exp(Q(s,a)/α)`, with max-subtraction per state.
pub fn closed_form_optimal_policy<F: Scalar>(
    q: &QFunction<F>,
    reference: &SoftPolicy<F>,
    alpha: F,
) -> Result<SoftPolicy<F>> {
    if !(alpha > F::zero()) {
        return Err(PspoError::InvalidInput("alpha must be positive".into()));
    }
    check_shapes(q, reference)?;
    let logits = Table::from_fn(q.n_states(), q.n_actions(), |s, a| {
        let m = reference.prob(s, a);
        if m > F::zero() {
            m.ln() + q.get(s, a) / alpha
        } else {
            F::neg_infinity()
        }
    });
    Ok(SoftPolicy::from_logits(&logits))
}

/// Per-state objective `E_π[Q(s,·)] − α KL(π(·|s) ‖ μ(·|s))`.
pub fn regularized_state_objective<F: Scalar>(q_row: &[F], policy_row: &[F], reference_row: &[F], alpha: F) -> F {
    let value: F = policy_row.iter().zip(q_row).map(|(&p, &v)| p * v).sum();
    if alpha == F::zero() {
        return value;
    }
    match kl_divergence_rows(policy_row, reference_row) {
        Ok(kl) => value - alpha * kl,
        Err(_) => F::neg_infinity(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementStep<F> {
    pub policy: SoftPolicy<F>,
    /// Lagrange multiplier of the KL constraint (`1/t − α`).
    pub lambda: f64,
    /// Tilt step `t = 1/(α+λ)` actually used.
    pub step: f64,
    /// Aggregated KL(π_{i+1} ‖ π_i).
    pub kl: f64,
    /// Largest per-state KL(π_{i+1} ‖ π_i).
    pub kl_max: f64,
    /// Whether the trust region was active (`λ > 0`).
    pub constrained: bool,
}

/// Inputs of a trust-region step.
#[derive(Debug, Clone, Copy)]
pub struct TrustRegion<'a, F> {
    pub alpha: F,
    pub epsilon: F,
    pub aggregation: KlAggregation,
    /// State weights for [`KlAggregation::WeightedMean`].
    pub weights: Option<&'a [F]>,
}

fn check_shapes<F: Scalar>(q: &QFunction<F>, p: &SoftPolicy<F>) -> Result<()> {
    if q.n_states() != p.n_states() || q.n_actions() != p.n_actions() {
        return Err(PspoError::DimensionMismatch("Q vs policy".into()));
    }
    Ok(())
}

struct Tilt<F> {
    /// `log π_i`
    base: Table<F>,
    /// `g = Q + α (log μ − log π_i)`
    direction: Table<F>,
}

impl<F: Scalar> Tilt<F> {
    /// Logits more than `0.9·|ln min_positive|` below the row maximum are
    /// raised to that floor so every action keeps positive probability.
    fn policy(&self, t: F) -> SoftPolicy<F> {
        let floor = F::of(0.9) * F::min_positive_value().ln();
        let mut logits = Table::from_fn(self.base.rows(), self.base.cols(), |s, a| {
            self.base.get(s, a) + t * self.direction.get(s, a)
        });
        for s in 0..logits.rows() {
            let row = logits.row_mut(s);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            for v in row.iter_mut() {
                *v = v.max(max + floor);
            }
        }
        SoftPolicy::from_logits(&logits)
    }
}

fn kl_stats<F: Scalar>(new: &SoftPolicy<F>, old: &SoftPolicy<F>, tr: &TrustRegion<'_, F>) -> Result<(f64, f64)> {
    let mut max = 0.0f64;
    let mut weighted = 0.0f64;
    for s in 0..new.n_states() {
        let kl = kl_divergence_rows(new.row(s), old.row(s))
            .map_err(|action| PspoError::InfiniteKl { state: s, action })?
            .to_f64_lossy();
        max = max.max(kl);
        if let Some(w) = tr.weights {
            weighted += w[s].to_f64_lossy() * kl;
        }
    }
    let agg = match tr.aggregation {
        KlAggregation::Max => max,
        KlAggregation::WeightedMean => weighted,
    };
    Ok((agg, max))
}

/// Solves `max_π E_π[Q] − α KL(π‖μ)` subject to `KL(π‖π_i) ≤ ε` per the
/// chosen aggregation. With `α = 0` the objective is `E_π[Q]` and the
/// unconstrained optimum is greedy, so the step bracket is grown by doubling.
pub fn constrained_improvement_step<F: Scalar>(
    q: &QFunction<F>,
    current: &SoftPolicy<F>,
    reference: &SoftPolicy<F>,
    tr: &TrustRegion<'_, F>,
) -> Result<ImprovementStep<F>> {
    check_shapes(q, current)?;
    check_shapes(q, reference)?;
    if !(tr.epsilon > F::zero()) || tr.alpha < F::zero() {
        return Err(PspoError::InvalidInput("need epsilon > 0 and alpha >= 0".into()));
    }
    if tr.aggregation == KlAggregation::WeightedMean && tr.weights.is_none_or(|w| w.len() != q.n_states()) {
        return Err(PspoError::InvalidInput("weighted KL needs one weight per state".into()));
    }
    if !current.is_strictly_positive() {
        return Err(PspoError::InvalidInput("current policy must be strictly positive".into()));
    }
    let alpha = tr.alpha;
    let (ns, na) = (q.n_states(), q.n_actions());
    let base = Table::from_fn(ns, na, |s, a| current.prob(s, a).ln());
    let mut direction = Table::filled(ns, na, F::zero());
    for s in 0..ns {
        for a in 0..na {
            let mut g = q.get(s, a);
            if alpha > F::zero() {
                let m = reference.prob(s, a);
                if !(m > F::zero()) {
                    return Err(PspoError::InfiniteKl { state: s, action: a });
                }
                g += alpha * (m.ln() - base.get(s, a));
            }
            direction.set(s, a, g);
        }
    }
    let tilt = Tilt { base, direction };
    let eps = tr.epsilon.to_f64_lossy();
    let eval = |t: F| -> Result<(SoftPolicy<F>, f64, f64)> {
        let p = tilt.policy(t);
        let (agg, max) = kl_stats(&p, current, tr)?;
        Ok((p, agg, max))
    };

    let finish = |t: F, policy: SoftPolicy<F>, kl: f64, kl_max: f64, constrained: bool| {
        let step = t.to_f64_lossy();
        let lambda = if constrained { 1.0 / step - alpha.to_f64_lossy() } else { 0.0 };
        ImprovementStep { policy, lambda: lambda.max(0.0), step, kl, kl_max, constrained }
    };

    let mut hi;
    if alpha > F::zero() {
        hi = F::one() / alpha;
        let (p, kl, kl_max) = eval(hi)?;
        if kl <= eps {
            return Ok(finish(hi, p, kl, kl_max, false));
        }
    } else {
        hi = F::one();
        let mut grown = 0;
        loop {
            let (p, kl, kl_max) = eval(hi)?;
            if kl > eps {
                break;
            }
            grown += 1;
            if grown > 200 || !hi.is_finite() {
                // `g` is (numerically) constant per state: every step is feasible.
                return Ok(finish(hi, p, kl, kl_max, false));
            }
            hi = hi * F::two();
        }
    }
    let mut lo = F::zero();
    let mut best = (current.clone(), 0.0, 0.0);
    let mut kl_lo = 0.0;
    for _ in 0..BISECTION_ITERS {
        let mid = (lo + hi) * F::half();
        if mid <= lo || mid >= hi {
            break;
        }
        let (p, kl, kl_max) = eval(mid)?;
        if kl <= eps {
            lo = mid;
            kl_lo = kl;
            best = (p, kl, kl_max);
        } else {
            hi = mid;
        }
    }
    if eps - kl_lo > 1e-6 && lo == F::zero() {
        return Err(PspoError::BisectionFailed {
            iterations: BISECTION_ITERS,
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
            kl_lo,
            target: eps,
        });
    }
    let (p, kl, kl_max) = best;
    Ok(finish(lo, p, kl, kl_max, true))
}
