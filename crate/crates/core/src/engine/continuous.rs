//! Training loop for continuous states with a discrete action grid.
//!
//! The critic is linear in a fixed basis per action, `Q(s,a) = w_a·φ(s)`.
//! The policy is the exponential tilt of the reference by a linear score,
//! `π(a|s) ∝ μ(a) exp(θ_a·φ(s))`. The trust-region step
//! `π_{i+1} ∝ μ^{αt} π_i^{1−αt} exp(t Q)` keeps this family closed:
//! `θ_{i+1} = (1 − αt) θ_i + t w`, with `t` found by bisection on the
//! batch states.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PspoConfig;
use super::improvement::{constrained_improvement_step, TrustRegion};
use super::report::IterationReport;
use super::stochastic::variance_bound_check;
use crate::belief::{posterior_update, uncertainty_metric_exact, Belief, ConsistencyScore};
use crate::data::{OfflineDataset, TransitionRecord};
use crate::dynamics::{generate_synthetic, DynamicsModel, FeatureMap, GaussianModel, ModelEnsemble};
use crate::error::{PspoError, Result};
use crate::linalg::solve;
use crate::mdp::{kl_divergence_rows, soft_value_row, QFunction, SoftPolicy, Table};
use crate::scalar::weighted_log_sum_exp;
use crate::seed::{derive_seed, rng_from_seed, sample_categorical, Rng};
use crate::stats;

/// Per-action linear map `f(s, a) = w_a · φ(s)`, `weights[a * dim + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQ {
    pub n_actions: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl LinearQ {
    pub fn zeros(n_actions: usize, dim: usize) -> Self {
        Self { n_actions, dim, weights: vec![0.0; n_actions * dim] }
    }

    pub fn block(&self, a: usize) -> &[f64] {
        &self.weights[a * self.dim..(a + 1) * self.dim]
    }

    pub fn value(&self, phi: &[f64], a: usize) -> f64 {
        self.block(a).iter().zip(phi).map(|(w, x)| w * x).sum()
    }

    pub fn values(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.value(phi, a)).collect()
    }

    /// `τ·self + (1−τ)·other`.
    pub fn polyak_towards(&self, other: &Self, tau: f64) -> Self {
        let weights = self.weights.iter().zip(&other.weights).map(|(a, b)| tau * a + (1.0 - tau) * b).collect();
        Self { weights, ..*self }
    }
}

/// `π(a|s) ∝ μ(a) exp(θ_a·φ(s))` with a state-independent reference `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftPolicy {
    pub reference: Vec<f64>,
    pub scores: LinearQ,
}

impl LinearSoftPolicy {
    pub fn new(reference: Vec<f64>, dim: usize) -> Self {
        let n = reference.len();
        Self { reference, scores: LinearQ::zeros(n, dim) }
    }

    pub fn n_actions(&self) -> usize {
        self.reference.len()
    }

    /// Logits more than `0.9·|ln min_positive|` below the largest one are
    /// raised to that floor so every supported action keeps positive mass.
    pub fn probs(&self, phi: &[f64]) -> Vec<f64> {
        let mut logits: Vec<f64> = self.scores.values(phi);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let floor = max + 0.9 * f64::MIN_POSITIVE.ln();
        logits.iter_mut().for_each(|l| *l = l.max(floor));
        let z = weighted_log_sum_exp(&self.reference, &logits);
        self.reference.iter().zip(&logits).map(|(&m, &l)| if m > 0.0 { m * (l - z).exp() } else { 0.0 }).collect()
    }

    pub fn sample(&self, phi: &[f64], rng: &mut Rng) -> usize {
        sample_categorical(&self.probs(phi), rng)
    }

    /// Action with the largest probability.
    pub fn greedy(&self, phi: &[f64]) -> usize {
        let p = self.probs(phi);
        (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).expect("non-empty action grid")
    }

    pub fn polyak_towards(&self, other: &Self, tau: f64) -> Self {
        Self { reference: self.reference.clone(), scores: self.scores.polyak_towards(&other.scores, tau) }
    }
}

/// True-environment return of a policy.
pub type EvaluateFn<'a> = dyn Fn(&LinearSoftPolicy) -> Result<f64> + Sync + 'a;

/// A batch state with its logged `(action, reward)` when it is a real record.
type BatchState = (Vec<f64>, Option<(usize, f64)>);

/// Fixed inputs of a continuous-state run.
pub struct ContinuousProblem<'a, Phi, D> {
    pub dataset: &'a OfflineDataset<Vec<f64>>,
    pub ensemble: &'a ModelEnsemble<GaussianModel<Phi>>,
    pub features: &'a Phi,
    /// State-independent behavior probabilities `μ`.
    pub reference: &'a [f64],
    pub r_max: f64,
    /// Initial states for the regularized-return estimate.
    pub start_states: &'a [Vec<f64>],
    /// Terminal test on synthetic transitions `(s, a, s')`.
    pub is_done: D,
    /// Optional true-environment evaluation, run every `eval_every` iterations.
    pub evaluate: Option<&'a EvaluateFn<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousOutcome {
    pub policy: LinearSoftPolicy,
    pub target_policy: LinearSoftPolicy,
    pub q: LinearQ,
    pub target_q: LinearQ,
    pub belief: Belief,
    pub reports: Vec<IterationReport>,
}

struct ValueCtx<'a, Phi, D> {
    features: &'a Phi,
    q: &'a LinearQ,
    reference: &'a [f64],
    alpha: f64,
    bound: f64,
    gamma: f64,
    is_done: &'a D,
}

impl<Phi: FeatureMap, D: Fn(&[f64], usize, &[f64]) -> bool> ValueCtx<'_, Phi, D> {
    /// Soft value of the clamped critic at `s`.
    fn state_value(&self, s: &[f64]) -> f64 {
        let phi = self.features.features(s);
        let q: Vec<f64> = self.q.values(&phi).into_iter().map(|v| v.clamp(-self.bound, self.bound)).collect();
        soft_value_row(&q, self.reference, self.alpha)
    }

    /// `mean_k [r_k + γ (1 − done_k) V(s'_k)]` with `(s'_k, r_k)` drawn from
    /// `model`; `observed_reward` replaces the model reward when given.
    fn target(
        &self,
        model: &GaussianModel<Phi>,
        s: &Vec<f64>,
        a: usize,
        observed_reward: Option<f64>,
        samples: usize,
        rng: &mut Rng,
    ) -> f64
    where
        Phi: Clone,
    {
        let mut total = 0.0;
        for _ in 0..samples {
            let (s2, r) = model.sample_next(s, a, rng);
            let r = observed_reward.unwrap_or(r);
            let v = if (self.is_done)(s, a, &s2) { 0.0 } else { self.state_value(&s2) };
            total += r + self.gamma * v;
        }
        total / samples as f64
    }
}

/// Monte-Carlo consistency score of every member on a real batch:
/// `mean (Q(s,a) − r − γ E_{s'∼T_i}[(1 − done) V(s')])²`.
#[allow(clippy::too_many_arguments)]
fn consistency_scores_sampled<Phi, D>(
    ensemble: &ModelEnsemble<GaussianModel<Phi>>,
    batch: &[TransitionRecord<Vec<f64>>],
    ctx: &ValueCtx<'_, Phi, D>,
    samples: usize,
    seed: u64,
) -> Result<ConsistencyScore>
where
    Phi: FeatureMap + Clone,
    D: Fn(&[f64], usize, &[f64]) -> bool + Sync,
{
    let members: Vec<&GaussianModel<Phi>> = ensemble.members().collect();
    let scores = members
        .par_iter()
        .enumerate()
        .map(|(i, model)| {
            let mut rng = rng_from_seed(derive_seed(seed, "consistency", i as u64));
            let total: f64 = batch
                .iter()
                .map(|rec| {
                    let q = ctx.q.value(&ctx.features.features(&rec.s), rec.a);
                    let y = ctx.target(model, &rec.s, rec.a, Some(rec.r), samples, &mut rng);
                    (q - y) * (q - y)
                })
                .sum();
            total / batch.len() as f64
        })
        .collect();
    ConsistencyScore::new(scores)
}

/// Ridge least squares `w_a = argmin Σ_b (w·φ_b − y_{b,a})² + λ B ‖w‖²`
/// for every action, sharing the design matrix.
fn fit_linear(phis: &[Vec<f64>], targets: &[Vec<f64>], n_actions: usize, dim: usize, ridge: f64) -> Result<LinearQ> {
    let b = phis.len();
    let mut gram = vec![0.0; dim * dim];
    for phi in phis {
        for i in 0..dim {
            for j in 0..dim {
                gram[i * dim + j] += phi[i] * phi[j];
            }
        }
    }
    for i in 0..dim {
        gram[i * dim + i] += ridge * b as f64;
    }
    let mut weights = Vec::with_capacity(n_actions * dim);
    for a in 0..n_actions {
        let mut rhs = vec![0.0; dim];
        for (phi, y) in phis.iter().zip(targets) {
            for j in 0..dim {
                rhs[j] += phi[j] * y[a];
            }
        }
        weights.extend(solve(&gram, &rhs, dim)?);
    }
    Ok(LinearQ { n_actions, dim, weights })
}

pub fn train_continuous<Phi, D>(
    problem: &ContinuousProblem<'_, Phi, D>,
    config: &PspoConfig,
    seed: u64,
) -> Result<ContinuousOutcome>
where
    Phi: FeatureMap + Clone,
    D: Fn(&[f64], usize, &[f64]) -> bool + Sync,
{
    config.validate()?;
    let ens = problem.ensemble;
    let na = problem.reference.len();
    let dim = problem.features.dim();
    if ens.member(0).n_actions() != na {
        return Err(PspoError::DimensionMismatch("reference vs model actions".into()));
    }
    let real: Vec<TransitionRecord<Vec<f64>>> = problem.dataset.real_records().cloned().collect();
    if real.is_empty() {
        return Err(PspoError::EmptyBatch);
    }
    let real = OfflineDataset::new(real)?;
    let backup_ref: Vec<f64> =
        if config.uniform_reference() { vec![1.0 / na as f64; na] } else { problem.reference.to_vec() };
    let backup_alpha = config.backup_alpha();
    let improve_alpha = config.improvement_alpha();
    let bound = problem.r_max / (1.0 - config.gamma);
    let schedule = config.schedule();

    let mut policy = LinearSoftPolicy::new(backup_ref.clone(), dim);
    let mut target_policy = policy.clone();
    let mut q = LinearQ::zeros(na, dim);
    let mut target_q = q.clone();
    let prior = Belief::uniform(ens.len(), config.beta);
    let mut belief = prior.clone();
    let mut reports = Vec::with_capacity(config.iterations);
    let start_phis: Vec<Vec<f64>> = problem.start_states.iter().map(|s| problem.features.features(s)).collect();

    for i in 0..config.iterations {
        let mut step = || -> Result<IterationReport> {
            let iter_seed = derive_seed(seed, "iteration", i as u64);
            let mut rng = rng_from_seed(iter_seed);
            let ctx = ValueCtx {
                features: problem.features,
                q: &target_q,
                reference: &backup_ref,
                alpha: backup_alpha,
                bound,
                gamma: config.gamma,
                is_done: &problem.is_done,
            };

            if config.average_utilization {
                belief = prior.clone();
            } else if i % config.belief_update_every == 0 {
                let batch = real.minibatch(config.batch_size, &mut rng)?;
                let scores = consistency_scores_sampled(ens, &batch, &ctx, config.consistency_samples, iter_seed)?;
                belief = posterior_update(&prior, &scores)?;
            }

            let starts: Vec<Vec<f64>> =
                real.minibatch(config.rollout_starts, &mut rng)?.into_iter().map(|r| r.s).collect();
            let synthetic = if starts.is_empty() {
                Vec::new()
            } else {
                let tp = &target_policy;
                let phi = problem.features;
                generate_synthetic(
                    ens,
                    &belief,
                    |s: &Vec<f64>, rng: &mut Rng| tp.sample(&phi.features(s), rng),
                    |s: &Vec<f64>, a, s2: &Vec<f64>| (problem.is_done)(s, a, s2),
                    &starts,
                    config.rollout_horizon,
                    derive_seed(seed, "rollouts", i as u64),
                )?
            };
            let n_real = if synthetic.is_empty() {
                config.batch_size
            } else {
                (config.real_ratio * config.batch_size as f64).round() as usize
            };
            let mut batch: Vec<BatchState> =
                real.minibatch(n_real, &mut rng)?.into_iter().map(|r| (r.s, Some((r.a, r.r)))).collect();
            for _ in n_real..config.batch_size {
                if synthetic.is_empty() {
                    break;
                }
                batch.push((synthetic[rng.random_range(0..synthetic.len())].s.clone(), None));
            }

            // Posterior-sampled targets for every action at every batch state.
            let model_draws: Vec<Vec<usize>> =
                batch.iter().map(|_| (0..na).map(|_| belief.sample_model(&mut rng)).collect()).collect();
            let targets: Vec<Vec<f64>> = batch
                .par_iter()
                .zip(&model_draws)
                .enumerate()
                .map(|(b, ((s, obs), draws))| {
                    let mut rng = rng_from_seed(derive_seed(iter_seed, "targets", b as u64));
                    (0..na)
                        .map(|a| {
                            let observed = obs.filter(|(ta, _)| *ta == a).map(|(_, r)| r);
                            ctx.target(ens.member(draws[a]), s, a, observed, config.target_samples, &mut rng)
                        })
                        .collect()
                })
                .collect();
            let flat: Vec<f64> = targets.iter().flatten().copied().collect();
            let var = variance_bound_check(&flat, problem.r_max, config.gamma)?;

            let phis: Vec<Vec<f64>> = batch.iter().map(|(s, _)| problem.features.features(s)).collect();
            let fitted = fit_linear(&phis, &targets, na, dim, config.critic_ridge)?;
            let eta = schedule.step_size(i);
            q = fitted.polyak_towards(&q, eta);

            let q_table = Table::from_fn(phis.len(), na, |b, a| q.value(&phis[b], a));
            let pi_table = Table::from_fn(phis.len(), na, |b, a| policy.probs(&phis[b])[a]);
            let mu_table = Table::from_fn(phis.len(), na, |_, a| backup_ref[a]);
            let improvement = constrained_improvement_step(
                &QFunction::new(q_table)?,
                &SoftPolicy::new(pi_table)?,
                &SoftPolicy::new(mu_table)?,
                &TrustRegion {
                    alpha: improve_alpha,
                    epsilon: config.epsilon_trust,
                    aggregation: config.kl_aggregation,
                    weights: Some(&vec![1.0 / phis.len() as f64; phis.len()]),
                },
            )?;
            let t = improvement.step;
            let scores = LinearQ {
                weights: policy
                    .scores
                    .weights
                    .iter()
                    .zip(&q.weights)
                    .map(|(th, w)| (1.0 - improve_alpha * t) * th + t * w)
                    .collect(),
                ..policy.scores.clone()
            };
            policy = LinearSoftPolicy { reference: backup_ref.clone(), scores };

            let regularized = stats::mean(
                &start_phis
                    .iter()
                    .map(|phi| {
                        let p = policy.probs(phi);
                        let value: f64 = p.iter().zip(q.values(phi)).map(|(p, v)| p * v).sum();
                        let kl = if improve_alpha > 0.0 {
                            kl_divergence_rows(&p, &backup_ref).unwrap_or(f64::INFINITY)
                        } else {
                            0.0
                        };
                        value - improve_alpha * kl
                    })
                    .collect::<Vec<_>>(),
            );

            let uncertainty: Vec<f64> = batch
                .iter()
                .flat_map(|(s, _)| (0..na).map(move |a| (s, a)))
                .map(|(s, a)| uncertainty_metric_exact(ens, &belief, s, a))
                .collect::<Result<_>>()?;
            let corr = stats::spearman(&uncertainty, &flat);

            let true_return = match problem.evaluate {
                Some(f)
                    if config.eval_every > 0 && ((i + 1) % config.eval_every == 0 || i + 1 == config.iterations) =>
                {
                    Some(f(&policy)?)
                }
                _ => None,
            };

            target_q = q.polyak_towards(&target_q, config.polyak);
            target_policy = policy.polyak_towards(&target_policy, config.polyak);

            Ok(IterationReport {
                iteration: i,
                posterior: belief.posterior().to_vec(),
                mean_target: stats::mean(&flat),
                target_variance: var.empirical_variance,
                variance_bound: var.bound,
                regularized_return: regularized,
                return_before: None,
                return_after: None,
                true_return,
                kl_step: improvement.kl,
                kl_max: improvement.kl_max,
                lambda: improvement.lambda,
                condition_holds: None,
                condition_lhs: None,
                condition_rhs: None,
                improved: None,
                uncertainty_td_corr: corr.is_finite().then_some(corr),
            })
        };
        reports.push(step().map_err(|e| e.at_iteration(i))?);
    }
    Ok(ContinuousOutcome { policy, target_policy, q, target_q, belief, reports })
}

/// Spearman correlation between model disagreement and posterior-sampled
/// TD targets over `pairs`, with targets from `q` as in training.
#[allow(clippy::too_many_arguments)]
pub fn uncertainty_td_pairs<Phi, D>(
    problem: &ContinuousProblem<'_, Phi, D>,
    config: &PspoConfig,
    belief: &Belief,
    q: &LinearQ,
    pairs: &[(Vec<f64>, usize)],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    Phi: FeatureMap + Clone,
    D: Fn(&[f64], usize, &[f64]) -> bool + Sync,
{
    let na = problem.reference.len();
    let backup_ref: Vec<f64> =
        if config.uniform_reference() { vec![1.0 / na as f64; na] } else { problem.reference.to_vec() };
    let ctx = ValueCtx {
        features: problem.features,
        q,
        reference: &backup_ref,
        alpha: config.backup_alpha(),
        bound: problem.r_max / (1.0 - config.gamma),
        gamma: config.gamma,
        is_done: &problem.is_done,
    };
    let ens = problem.ensemble;
    pairs
        .par_iter()
        .enumerate()
        .map(|(k, (s, a))| {
            let mut rng = rng_from_seed(derive_seed(seed, "diagnostic", k as u64));
            let model = ens.member(belief.sample_model(&mut rng));
            let y = ctx.target(model, s, *a, None, config.target_samples, &mut rng);
            let u = uncertainty_metric_exact(ens, belief, s, *a)?;
            Ok((u, y))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}
