//! Stochastic-approximation policy evaluation with posterior-sampled targets.

use crate::belief::{Belief, NextValue};
use crate::dynamics::{CategoricalModel, ModelEnsemble};
use crate::error::{PspoError, Result};
use crate::mdp::QFunction;
use crate::scalar::Scalar;
use crate::seed::Rng;
use crate::stats;

/// A state-action pair to update, optionally carrying an observed reward.
/// Without one, the sampled model's reward estimate is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub s: usize,
    pub a: usize,
    pub reward: Option<f64>,
}

impl Query {
    pub fn pair(s: usize, a: usize) -> Self {
        Self { s, a, reward: None }
    }
}

/// Target statistics of one stochastic update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateFragment {
    pub targets: Vec<f64>,
    pub mean_target: f64,
    pub target_variance: f64,
    pub step_size: f64,
}

/// `r_max / (1 − γ)`.
pub fn value_bound<F: Scalar>(r_max: F, gamma: F) -> F {
    r_max / (F::one() - gamma)
}

/// Posterior-sampled targets `Y(s,a) = r + γ Σ_{s'} T'(s'|s,a) V(s')` with a
/// fresh `T' ∼ P(T|E)` per query. `V` is formed from `q` clamped to
/// `±r_max/(1−γ)`, so `|Y| ≤ r_max/(1−γ)` whenever `|r| ≤ r_max`.
#[allow(clippy::too_many_arguments)]
pub fn sample_targets<F: Scalar>(
    q: &QFunction<F>,
    queries: &[Query],
    next_value: NextValue<'_, F>,
    ensemble: &ModelEnsemble<CategoricalModel<F>>,
    belief: &Belief,
    gamma: F,
    r_max: F,
    rng: &mut Rng,
) -> Result<Vec<F>> {
    ensemble.check_belief(belief)?;
    let (ns, na) = (q.n_states(), q.n_actions());
    let bound = value_bound(r_max, gamma);
    let clamped = QFunction::new(q.table().map(|v| v.max(-bound).min(bound)))?;
    let v = next_value.state_values(&clamped);
    queries
        .iter()
        .enumerate()
        .map(|(i, query)| {
            if query.s >= ns || query.a >= na {
                return Err(PspoError::IndexOutOfRange(format!("query {i}")));
            }
            let model = ensemble.member(belief.sample_model(rng));
            let r = query.reward.map(F::of).unwrap_or_else(|| model.reward(query.s, query.a));
            let ev: F = model.next_row(query.s, query.a).iter().zip(&v).map(|(&t, &x)| t * x).sum();
            Ok(r + gamma * ev)
        })
        .collect()
}

/// One Robbins-Monro step `Q(s,a) ← Q(s,a) + η (Y(s,a) − Q(s,a))` per query.
/// All targets are computed from the input `q`; repeated pairs are updated
/// sequentially in query order.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_q_update<F: Scalar>(
    q: &QFunction<F>,
    queries: &[Query],
    next_value: NextValue<'_, F>,
    ensemble: &ModelEnsemble<CategoricalModel<F>>,
    belief: &Belief,
    gamma: F,
    r_max: F,
    step_size: F,
    rng: &mut Rng,
) -> Result<(QFunction<F>, UpdateFragment)> {
    if queries.is_empty() {
        return Err(PspoError::EmptyBatch);
    }
    if !(step_size >= F::zero()) {
        return Err(PspoError::InvalidInput("step size must be non-negative".into()));
    }
    let targets = sample_targets(q, queries, next_value, ensemble, belief, gamma, r_max, rng)?;
    let mut next = q.clone();
    for (query, &y) in queries.iter().zip(&targets) {
        let cur = next.get(query.s, query.a);
        next.set(query.s, query.a, cur + step_size * (y - cur));
    }
    let targets: Vec<f64> = targets.iter().map(|y| y.to_f64_lossy()).collect();
    Ok((
        next,
        UpdateFragment {
            mean_target: stats::mean(&targets),
            target_variance: stats::population_variance(&targets),
            targets,
            step_size: step_size.to_f64_lossy(),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceCheck {
    pub empirical_variance: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Compares the population variance of `samples` with `r_max²/(1−γ)²`.
pub fn variance_bound_check(samples: &[f64], r_max: f64, gamma: f64) -> Result<VarianceCheck> {
    if samples.len() < 2 {
        return Err(PspoError::InvalidInput("need at least two target samples".into()));
    }
    let bound = (r_max / (1.0 - gamma)).powi(2);
    let empirical_variance = stats::population_variance(samples);
    Ok(VarianceCheck { empirical_variance, bound, pass: empirical_variance <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{SoftPolicy, Table, TabularMdp};
    use crate::seed::rng_from_seed;

    fn single_model() -> ModelEnsemble<CategoricalModel<f64>> {
        let mdp = TabularMdp::new(
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0],
            Table::from_flat(2, 1, vec![1.0, 0.0]).unwrap(),
            0.5,
            vec![1.0, 0.0],
            1.0,
        )
        .unwrap();
        ModelEnsemble::new(vec![CategoricalModel::from_mdp(&mdp)], vec![0]).unwrap()
    }

    #[test]
    fn full_step_jumps_to_target_and_zero_step_is_identity() {
        let ens = single_model();
        let belief = Belief::uniform(1, 1.0);
        let pi = SoftPolicy::uniform(2, 1);
        let q = QFunction::new(Table::from_flat(2, 1, vec![0.4, -0.2]).unwrap()).unwrap();
        let queries = [Query::pair(0, 0), Query::pair(1, 0)];
        let mut rng = rng_from_seed(0);
        let nv = NextValue::Expected(&pi);
        let (full, frag) = stochastic_q_update(&q, &queries, nv, &ens, &belief, 0.5, 1.0, 1.0, &mut rng).unwrap();
        assert_eq!(full.get(0, 0), 1.0 + 0.5 * -0.2);
        assert_eq!(full.get(1, 0), 0.5 * 0.4);
        assert_eq!(frag.targets, vec![0.9, 0.2]);
        let (same, _) = stochastic_q_update(&q, &queries, nv, &ens, &belief, 0.5, 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(same, q);
    }

    #[test]
    fn targets_respect_the_value_bound() {
        let ens = single_model();
        let belief = Belief::uniform(1, 1.0);
        let pi = SoftPolicy::uniform(2, 1);
        let q = QFunction::new(Table::from_flat(2, 1, vec![1e6, -1e6]).unwrap()).unwrap();
        let queries = [Query::pair(0, 0), Query::pair(1, 0)];
        let ys = sample_targets(&q, &queries, NextValue::Expected(&pi), &ens, &belief, 0.5, 1.0, &mut rng_from_seed(1))
            .unwrap();
        assert!(ys.iter().all(|y| y.abs() <= 2.0));
    }

    #[test]
    fn variance_bound_examples() {
        let c = variance_bound_check(&[3.0, 3.0, 3.0], 1.0, 0.9).unwrap();
        assert!((c.bound - 100.0).abs() < 1e-9);
        assert_eq!(c.empirical_variance, 0.0);
        assert!(c.pass);
        // Two-point targets at ±r_max/(1−γ) attain the bound.
        let extremal: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 10.0 } else { -10.0 }).collect();
        let c = variance_bound_check(&extremal, 1.0, 0.9).unwrap();
        assert!((c.empirical_variance - 100.0).abs() < 1e-9);
        assert!(c.pass);
        assert!(variance_bound_check(&[1.0], 1.0, 0.9).is_err());
    }
}
