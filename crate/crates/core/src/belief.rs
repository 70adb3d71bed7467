//! Posterior weights over a finite ensemble of dynamics models.
//!
//! The posterior minimizes `KL(P ‖ prior) + β E_P[F]`, whose solution is the
//! Gibbs tilt `P(i) ∝ prior(i) exp(−β F(i))`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Provenance, TransitionRecord};
use crate::dynamics::{CategoricalModel, DynamicsModel, ModelEnsemble};
use crate::error::{PspoError, Result};
use crate::mdp::{soft_value_row, QFunction, SoftPolicy};
use crate::scalar::Scalar;
use crate::seed::{rng_from_seed, Rng};

/// Natural log of the smallest reported spread.
pub const LOG_SPREAD_FLOOR: f64 = -27.631_021_115_928_547; // ln 1e-12

const WEIGHT_TOL: f64 = 1e-12;

fn check_weights(w: &[f64], what: &str) -> Result<()> {
    if w.is_empty() {
        return Err(PspoError::InvalidInput(format!("{what} is empty")));
    }
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(PspoError::InvalidInput(format!("{what} has negative or non-finite weights")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(PspoError::InvalidInput(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    prior: Vec<f64>,
    posterior: Vec<f64>,
    beta: f64,
}

impl Belief {
    /// Belief whose posterior starts at the prior.
    pub fn new(prior: Vec<f64>, beta: f64) -> Result<Self> {
        let posterior = prior.clone();
        Self::from_posterior(prior, posterior, beta)
    }

    pub fn uniform(n: usize, beta: f64) -> Self {
        Self::new(vec![1.0 / n as f64; n], beta).expect("uniform weights are valid")
    }

    pub fn from_posterior(prior: Vec<f64>, posterior: Vec<f64>, beta: f64) -> Result<Self> {
        check_weights(&prior, "prior")?;
        check_weights(&posterior, "posterior")?;
        if prior.len() != posterior.len() {
            return Err(PspoError::DimensionMismatch("prior and posterior lengths".into()));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(PspoError::InvalidInput("beta must be finite and non-negative".into()));
        }
        Ok(Self { prior, posterior, beta })
    }

    pub fn len(&self) -> usize {
        self.prior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prior.is_empty()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Same prior and β, posterior forced uniform.
    pub fn with_uniform_posterior(&self) -> Self {
        let n = self.len();
        Self { posterior: vec![1.0 / n as f64; n], ..self.clone() }
    }

    /// Categorical draw of a model index from the posterior.
    pub fn sample_model(&self, rng: &mut Rng) -> usize {
        self.sampler().sample(rng)
    }

    /// `n` posterior draws from a generator seeded with `seed`.
    pub fn sample_models(&self, seed: u64, n: usize) -> Vec<usize> {
        let dist = self.sampler();
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }

    fn sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.posterior).expect("posterior has positive mass")
    }

    /// Shannon entropy of the posterior (nats).
    pub fn posterior_entropy(&self) -> f64 {
        -self.posterior.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// Per-model consistency scores `F(T_i) ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore(Vec<f64>);

impl ConsistencyScore {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
            return Err(PspoError::InvalidInput("consistency scores must be finite and non-negative".into()));
        }
        Ok(Self(scores))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `posterior(i) = prior(i) exp(−β F(i)) / Z`.
///
/// Scores are centered by their minimum over models with positive prior
/// mass before exponentiation, so the best supported model keeps weight
/// `prior(i)` and the normalizer cannot underflow for finite scores.
pub fn posterior_update(belief: &Belief, scores: &ConsistencyScore) -> Result<Belief> {
    if scores.len() != belief.len() {
        return Err(PspoError::DimensionMismatch(format!("{} scores for {} models", scores.len(), belief.len())));
    }
    let f = scores.values();
    let min = f.iter().zip(&belief.prior).filter(|(_, &p)| p > 0.0).map(|(&s, _)| s).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = f
        .iter()
        .zip(&belief.prior)
        .map(|(&s, &p)| if p > 0.0 { p * (-belief.beta * (s - min)).exp() } else { 0.0 })
        .collect();
    let z: f64 = weights.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(PspoError::PosteriorUnderflow);
    }
    let posterior = weights.into_iter().map(|w| w / z).collect();
    Belief::from_posterior(belief.prior.clone(), posterior, belief.beta)
}

/// `KL(q ‖ prior) + β Σ q F`, infinite when `q` leaves the prior's support.
pub fn posterior_objective(q: &[f64], prior: &[f64], scores: &[f64], beta: f64) -> f64 {
    let mut total = 0.0;
    for ((&qi, &pi), &fi) in q.iter().zip(prior).zip(scores) {
        if qi <= 0.0 {
            continue;
        }
        if pi <= 0.0 {
            return f64::INFINITY;
        }
        total += qi * (qi / pi).ln() + beta * qi * fi;
    }
    total
}

/// Minimizes [`posterior_objective`] by exhaustive search over the simplex
/// grid with spacing `grid_step` (at most 4 models). Test oracle only.
pub fn posterior_brute_force(belief: &Belief, scores: &ConsistencyScore, grid_step: f64) -> Result<Vec<f64>> {
    let n = belief.len();
    if n > 4 {
        return Err(PspoError::TooManyModels(n));
    }
    if scores.len() != n {
        return Err(PspoError::DimensionMismatch("scores vs belief".into()));
    }
    if !(grid_step > 0.0 && grid_step <= 0.1) {
        return Err(PspoError::InvalidInput("grid_step must lie in (0, 0.1]".into()));
    }
    let k = (1.0 / grid_step).round() as usize;
    let h = 1.0 / k as f64;
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut counts = vec![0usize; n];
    let mut q = vec![0.0; n];
    // Enumerate compositions of k into n non-negative parts.
    fn recurse(i: usize, remaining: usize, counts: &mut [usize], q: &mut [f64], h: f64, eval: &mut dyn FnMut(&[f64])) {
        let n = counts.len();
        if i == n - 1 {
            counts[i] = remaining;
            q[i] = remaining as f64 * h;
            eval(q);
            return;
        }
        for c in 0..=remaining {
            counts[i] = c;
            q[i] = c as f64 * h;
            recurse(i + 1, remaining - c, counts, q, h, eval);
        }
    }
    let prior = belief.prior();
    let f = scores.values();
    let beta = belief.beta();
    recurse(0, k, &mut counts, &mut q, h, &mut |q| {
        let obj = posterior_objective(q, prior, f, beta);
        if obj < best.0 {
            best = (obj, q.to_vec());
        }
    });
    Ok(best.1)
}

/// Belief-weighted mixture of the members' next-state distributions.
pub fn posterior_predictive<M: DynamicsModel>(
    belief: &Belief,
    ensemble: &ModelEnsemble<M>,
    state: &M::State,
    action: usize,
) -> Result<Vec<f64>> {
    ensemble.check_belief(belief)?;
    let mut out: Option<Vec<f64>> = None;
    for (w, model) in belief.posterior().iter().zip(ensemble.members()) {
        let row = model.next_distribution(state, action).ok_or(PspoError::Unsupported(M::KIND))?;
        let acc = out.get_or_insert_with(|| vec![0.0; row.len()]);
        for (a, p) in acc.iter_mut().zip(&row) {
            *a += w * p;
        }
    }
    Ok(out.expect("ensemble is non-empty"))
}

fn log_mean_spread(means: &[Vec<f64>], weights: &[f64]) -> f64 {
    let dim = means[0].len();
    let total: f64 = weights.iter().sum();
    let mut spread = 0.0;
    for k in 0..dim {
        let mean: f64 = means.iter().zip(weights).map(|(m, w)| w * m[k]).sum::<f64>() / total;
        let var: f64 = means.iter().zip(weights).map(|(m, w)| w * (m[k] - mean).powi(2)).sum::<f64>() / total;
        spread += var.max(0.0).sqrt();
    }
    (spread / dim as f64).max(1e-12).ln()
}

/// `log` of the across-model standard deviation of predicted next-state
/// means (averaged over state dimensions), with models drawn from the
/// posterior. Floored at `ln 1e-12`.
pub fn uncertainty_metric<M: DynamicsModel>(
    ensemble: &ModelEnsemble<M>,
    belief: &Belief,
    state: &M::State,
    action: usize,
    n_model_samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    ensemble.check_belief(belief)?;
    if n_model_samples < 2 {
        return Err(PspoError::InvalidInput("need at least two model samples".into()));
    }
    let cache: Vec<Vec<f64>> = ensemble.members().map(|m| m.predicted_mean(state, action)).collect();
    let means: Vec<Vec<f64>> = (0..n_model_samples).map(|_| cache[belief.sample_model(rng)].clone()).collect();
    Ok(log_mean_spread(&means, &vec![1.0; n_model_samples]))
}

/// [`uncertainty_metric`] with the sampling replaced by exact posterior
/// weights (the limit of exhaustive sampling).
pub fn uncertainty_metric_exact<M: DynamicsModel>(
    ensemble: &ModelEnsemble<M>,
    belief: &Belief,
    state: &M::State,
    action: usize,
) -> Result<f64> {
    ensemble.check_belief(belief)?;
    let means: Vec<Vec<f64>> = ensemble.members().map(|m| m.predicted_mean(state, action)).collect();
    Ok(log_mean_spread(&means, belief.posterior()))
}

/// How the next-state value `V(s')` is formed from the critic.
#[derive(Debug, Clone, Copy)]
pub enum NextValue<'a, F> {
    /// `V(s) = Σ_a π(a|s) Q(s,a)`.
    Expected(&'a SoftPolicy<F>),
    /// `V(s) = α log Σ_a μ(a|s) exp(Q(s,a)/α)`.
    Soft { reference: &'a SoftPolicy<F>, alpha: F },
}

impl<F: Scalar> NextValue<'_, F> {
    pub fn state_values(&self, q: &QFunction<F>) -> Vec<F> {
        (0..q.n_states())
            .map(|s| match self {
                NextValue::Expected(pi) => pi.row(s).iter().zip(q.row(s)).map(|(&p, &v)| p * v).sum(),
                NextValue::Soft { reference, alpha } => soft_value_row(q.row(s), reference.row(s), *alpha),
            })
            .collect()
    }
}

fn check_batch(batch: &[TransitionRecord<usize>], q_states: usize, q_actions: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(PspoError::EmptyBatch);
    }
    for (i, r) in batch.iter().enumerate() {
        if r.provenance != Provenance::Real {
            return Err(PspoError::InvalidInput(format!("record {i}: consistency evidence must be real data")));
        }
        if r.s >= q_states || r.a >= q_actions {
            return Err(PspoError::IndexOutOfRange(format!("record {i}")));
        }
    }
    Ok(())
}

fn score_with_values<F: Scalar>(
    model: &CategoricalModel<F>,
    batch: &[TransitionRecord<usize>],
    q: &QFunction<F>,
    v: &[F],
    gamma: F,
) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|rec| {
            let ev: F = model.next_row(rec.s, rec.a).iter().zip(v).map(|(&t, &x)| t * x).sum();
            let resid = q.get(rec.s, rec.a).to_f64_lossy() - rec.r - (gamma * ev).to_f64_lossy();
            resid * resid
        })
        .sum();
    total / batch.len() as f64
}

/// Mean squared TD residual of member `model_index` on a real-data batch:
/// `mean (Q(s,a) − r − γ Σ_{s'} T_i(s'|s,a) V(s'))²`.
pub fn consistency_metric<F: Scalar>(
    model_index: usize,
    batch: &[TransitionRecord<usize>],
    q: &QFunction<F>,
    next_value: NextValue<'_, F>,
    ensemble: &ModelEnsemble<CategoricalModel<F>>,
    gamma: F,
) -> Result<f64> {
    if model_index >= ensemble.len() {
        return Err(PspoError::IndexOutOfRange(format!("model {model_index} of {}", ensemble.len())));
    }
    check_batch(batch, q.n_states(), q.n_actions())?;
    let v = next_value.state_values(q);
    Ok(score_with_values(ensemble.member(model_index), batch, q, &v, gamma))
}

/// [`consistency_metric`] for every member, computed in parallel.
pub fn consistency_scores<F: Scalar>(
    batch: &[TransitionRecord<usize>],
    q: &QFunction<F>,
    next_value: NextValue<'_, F>,
    ensemble: &ModelEnsemble<CategoricalModel<F>>,
    gamma: F,
) -> Result<ConsistencyScore> {
    check_batch(batch, q.n_states(), q.n_actions())?;
    let v = next_value.state_values(q);
    let members: Vec<&CategoricalModel<F>> = ensemble.members().collect();
    let scores = members.par_iter().map(|m| score_with_values(m, batch, q, &v, gamma)).collect();
    ConsistencyScore::new(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[f64]) -> ConsistencyScore {
        ConsistencyScore::new(v.to_vec()).unwrap()
    }

    #[test]
    fn symmetric_and_ln2_examples() {
        let b = Belief::uniform(2, 1.0);
        let p = posterior_update(&b, &scores(&[0.0, 0.0])).unwrap();
        assert_eq!(p.posterior(), &[0.5, 0.5]);
        let p = posterior_update(&b, &scores(&[0.0, 2f64.ln()])).unwrap();
        assert!((p.posterior()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.posterior()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equal_evidence_keeps_prior() {
        let b = Belief::new(vec![0.9, 0.1], 3.0).unwrap();
        let p = posterior_update(&b, &scores(&[7.5, 7.5])).unwrap();
        assert!((p.posterior()[0] - 0.9).abs() < 1e-15);
        assert_eq!(p.prior(), b.prior());
    }

    #[test]
    fn huge_scores_do_not_underflow() {
        let b = Belief::uniform(3, 1.0);
        let p = posterior_update(&b, &scores(&[5000.0, 5001.0, 9000.0])).unwrap();
        assert!((p.posterior()[0] - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn brute_force_examples() {
        let b = Belief::uniform(2, 1.0);
        for step in [1e-2, 1e-3] {
            let q = posterior_brute_force(&b, &scores(&[0.0, 2f64.ln()]), step).unwrap();
            assert!((q[0] - 2.0 / 3.0).abs() <= step);
        }
        let b0 = Belief::new(vec![0.3, 0.7], 0.0).unwrap();
        let q = posterior_brute_force(&b0, &scores(&[1.0, 0.0]), 1e-3).unwrap();
        assert!((q[0] - 0.3).abs() < 1e-9);
        let big = Belief::uniform(2, 1e4);
        let q = posterior_brute_force(&big, &scores(&[0.0, 1.0]), 1e-3).unwrap();
        assert!(q[0] >= 0.999);
        assert!(matches!(
            posterior_brute_force(&Belief::uniform(5, 1.0), &scores(&[0.0; 5]), 0.1),
            Err(PspoError::TooManyModels(5))
        ));
    }

    #[test]
    fn sampling_examples() {
        let point = Belief::from_posterior(vec![0.5, 0.5], vec![1.0, 0.0], 1.0).unwrap();
        assert!(point.sample_models(3, 1000).iter().all(|&i| i == 0));
        let half = Belief::uniform(2, 1.0);
        let draws = half.sample_models(1, 100_000);
        let freq = draws.iter().filter(|&&i| i == 0).count() as f64 / 1e5;
        assert!((0.49..=0.51).contains(&freq));
        assert_eq!(draws, half.sample_models(1, 100_000));
    }

    #[test]
    fn rejects_invalid_weights() {
        assert!(Belief::new(vec![0.5, 0.6], 1.0).is_err());
        assert!(Belief::new(vec![-0.5, 1.5], 1.0).is_err());
        assert!(ConsistencyScore::new(vec![-1.0]).is_err());
        assert!(posterior_update(&Belief::uniform(2, 1.0), &scores(&[0.0])).is_err());
    }
}
