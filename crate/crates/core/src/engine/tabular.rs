//! Training loop on finite state and action spaces.
//!
//! Each iteration: posterior from a real minibatch, synthetic rollouts under
//! the target policy, policy evaluation, a trust-region improvement step, and
//! Polyak averaging of the target critic and target policy.

use rayon::prelude::*;

use super::config::{EvaluationMode, PspoConfig};
use super::fisher::improvement_condition_check;
use super::improvement::{constrained_improvement_step, KlAggregation, TrustRegion};
use super::operators::MixtureKernel;
use super::report::IterationReport;
use super::stochastic::{sample_targets, variance_bound_check, Query};
use crate::belief::{consistency_scores, posterior_update, uncertainty_metric_exact, Belief, NextValue};
use crate::data::{OfflineDataset, TransitionRecord};
use crate::dynamics::{fit_categorical, generate_synthetic, CategoricalModel, ModelEnsemble};
use crate::error::{PspoError, Result};
use crate::mdp::{
    discounted_occupancy, expected_return, regularized_policy_eval, regularized_return, QFunction, SoftPolicy, Table,
    TabularMdp,
};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from_seed, sample_categorical};
use crate::stats::spearman;

/// Empirical action frequencies per state with pseudo-count `smoothing`.
/// States absent from the data get the uniform row.
pub fn empirical_behavior_policy<F: Scalar>(
    dataset: &OfflineDataset<usize>,
    n_states: usize,
    n_actions: usize,
    smoothing: F,
) -> Result<SoftPolicy<F>> {
    let mut counts = Table::filled(n_states, n_actions, smoothing);
    for (i, r) in dataset.real_records().enumerate() {
        if r.s >= n_states || r.a >= n_actions {
            return Err(PspoError::IndexOutOfRange(format!("record {i}")));
        }
        counts.set(r.s, r.a, counts.get(r.s, r.a) + F::one());
    }
    for s in 0..n_states {
        let row = counts.row_mut(s);
        let total: F = row.iter().copied().sum();
        for p in row.iter_mut() {
            *p = if total > F::zero() { *p / total } else { F::one() / F::of(n_actions as f64) };
        }
    }
    SoftPolicy::new(counts)
}

/// Bootstrap pool of `model_pool_size` categorical fits (seeds derived from
/// `master_seed`) from which `ensemble_size` members are drawn.
pub fn fit_tabular_ensemble<F: Scalar>(
    dataset: &OfflineDataset<usize>,
    n_states: usize,
    n_actions: usize,
    config: &PspoConfig,
    master_seed: u64,
) -> Result<ModelEnsemble<CategoricalModel<F>>> {
    let seeds: Vec<u64> =
        (0..config.model_pool_size as u64).map(|j| derive_seed(master_seed, "ensemble_member", j)).collect();
    let pool = seeds
        .par_iter()
        .map(|&seed| fit_categorical(dataset, n_states, n_actions, F::of(config.smoothing), Some(seed)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng_from_seed(derive_seed(master_seed, "ensemble_subsample", 0));
    ModelEnsemble::subsample(pool, seeds, config.ensemble_size, &mut rng)
}

/// Fixed inputs of a tabular run.
#[derive(Debug, Clone, Copy)]
pub struct TabularProblem<'a, F> {
    pub dataset: &'a OfflineDataset<usize>,
    pub ensemble: &'a ModelEnsemble<CategoricalModel<F>>,
    /// Behavior policy `μ`.
    pub reference: &'a SoftPolicy<F>,
    pub rho0: &'a [F],
    pub r_max: F,
    /// True dynamics, used only for reporting.
    pub true_mdp: Option<&'a TabularMdp<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularOutcome<F> {
    /// Last improvement iterate `π_I`.
    pub policy: SoftPolicy<F>,
    /// Last evaluated critic.
    pub q: QFunction<F>,
    pub target_policy: SoftPolicy<F>,
    pub target_q: QFunction<F>,
    pub belief: Belief,
    pub reports: Vec<IterationReport>,
}

pub fn train_tabular<F: Scalar>(
    problem: &TabularProblem<'_, F>,
    config: &PspoConfig,
    seed: u64,
) -> Result<TabularOutcome<F>> {
    config.validate()?;
    let ens = problem.ensemble;
    let first = ens.member(0);
    let (ns, na) = (first.n_states(), first.n_actions());
    if problem.reference.n_states() != ns || problem.reference.n_actions() != na {
        return Err(PspoError::DimensionMismatch("reference policy vs ensemble".into()));
    }
    if problem.rho0.len() != ns {
        return Err(PspoError::DimensionMismatch("rho0 vs ensemble".into()));
    }
    let real: Vec<TransitionRecord<usize>> = problem.dataset.real_records().cloned().collect();
    if real.is_empty() {
        return Err(PspoError::EmptyBatch);
    }
    let real = OfflineDataset::new(real)?;

    let gamma = F::of(config.gamma);
    let backup_alpha = F::of(config.backup_alpha());
    let improve_alpha = F::of(config.improvement_alpha());
    let backup_ref = if config.uniform_reference() { SoftPolicy::uniform(ns, na) } else { problem.reference.clone() };
    let tau = F::of(config.polyak);
    let schedule = config.schedule();

    let mut policy = backup_ref.clone();
    let mut target_policy = policy.clone();
    let mut q = QFunction::zeros(ns, na);
    let mut target_q = q.clone();
    let prior = Belief::uniform(ens.len(), config.beta);
    let mut belief = prior.clone();
    let mut reports = Vec::with_capacity(config.iterations);

    for i in 0..config.iterations {
        let mut step = || -> Result<IterationReport> {
            let mut rng = rng_from_seed(derive_seed(seed, "iteration", i as u64));
            let soft = NextValue::Soft { reference: &backup_ref, alpha: backup_alpha };

            if config.average_utilization {
                belief = prior.clone();
            } else if i % config.belief_update_every == 0 {
                let batch = real.minibatch(config.batch_size, &mut rng)?;
                let scores = consistency_scores(&batch, &target_q, soft, ens, gamma)?;
                belief = posterior_update(&prior, &scores)?;
            }
            let kernel = MixtureKernel::from_ensemble(ens, &belief, gamma)?;
            let mixture = kernel.to_mdp(problem.rho0.to_vec(), problem.r_max)?;

            let starts: Vec<usize> =
                real.minibatch(config.rollout_starts, &mut rng)?.into_iter().map(|r| r.s).collect();
            let synthetic = if starts.is_empty() {
                Vec::new()
            } else {
                let tp = &target_policy;
                generate_synthetic(
                    ens,
                    &belief,
                    |s: &usize, rng: &mut _| sample_categorical(tp.row(*s), rng),
                    |_, _, _| false,
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
            let mut queries: Vec<Query> = real
                .minibatch(n_real, &mut rng)?
                .into_iter()
                .map(|r| Query { s: r.s, a: r.a, reward: Some(r.r) })
                .collect();
            if !synthetic.is_empty() {
                use rand::Rng as _;
                for _ in n_real..config.batch_size {
                    let r = &synthetic[rng.random_range(0..synthetic.len())];
                    queries.push(Query { s: r.s, a: r.a, reward: Some(r.r) });
                }
            }

            let targets: Vec<f64> =
                sample_targets(&target_q, &queries, soft, ens, &belief, gamma, problem.r_max, &mut rng)?
                    .into_iter()
                    .map(|y| y.to_f64_lossy())
                    .collect();
            let var = variance_bound_check(&targets, problem.r_max.to_f64_lossy(), config.gamma)?;

            q = match config.evaluation {
                EvaluationMode::SoftOptimality => {
                    let mut cur = target_q.clone();
                    for _ in 0..config.eval_sweeps {
                        cur = kernel.backup(&cur, soft)?;
                    }
                    cur
                }
                EvaluationMode::ExactRegularized => {
                    regularized_policy_eval(&mixture, &policy, &backup_ref, improve_alpha)?
                }
                EvaluationMode::Stochastic => {
                    let eta = F::of(schedule.step_size(i));
                    let mut next = q.clone();
                    for (query, &y) in queries.iter().zip(&targets) {
                        let cur = next.get(query.s, query.a);
                        next.set(query.s, query.a, cur + eta * (F::of(y) - cur));
                    }
                    next
                }
            };

            let condition = if config.check_improvement {
                Some(improvement_condition_check(&mixture, &policy, &backup_ref, improve_alpha, config.fd_step)?)
            } else {
                None
            };

            let occupancy;
            let weights = match config.kl_aggregation {
                KlAggregation::Max => None,
                KlAggregation::WeightedMean => {
                    occupancy = discounted_occupancy(&mixture, &policy)?;
                    Some(occupancy.as_slice())
                }
            };
            let tr = TrustRegion {
                alpha: improve_alpha,
                epsilon: F::of(config.epsilon_trust),
                aggregation: config.kl_aggregation,
                weights,
            };
            let improvement = constrained_improvement_step(&q, &policy, &backup_ref, &tr)?;

            let before = expected_return(&mixture, &policy)?.to_f64_lossy();
            let after = expected_return(&mixture, &improvement.policy)?.to_f64_lossy();
            let regularized =
                regularized_return(&mixture, &improvement.policy, &backup_ref, improve_alpha)?.to_f64_lossy();
            let true_return = problem
                .true_mdp
                .map(|m| expected_return(m, &improvement.policy).map(|j| j.to_f64_lossy()))
                .transpose()?;

            let uncertainty: Vec<f64> =
                queries.iter().map(|qr| uncertainty_metric_exact(ens, &belief, &qr.s, qr.a)).collect::<Result<_>>()?;
            let corr = spearman(&uncertainty, &targets);
            let corr = corr.is_finite().then_some(corr);

            policy = improvement.policy;
            target_q = q.polyak_towards(&target_q, tau);
            target_policy = policy.polyak_towards(&target_policy, tau);

            Ok(IterationReport {
                iteration: i,
                posterior: belief.posterior().to_vec(),
                mean_target: crate::stats::mean(&targets),
                target_variance: var.empirical_variance,
                variance_bound: var.bound,
                regularized_return: regularized,
                return_before: Some(before),
                return_after: Some(after),
                true_return,
                kl_step: improvement.kl,
                kl_max: improvement.kl_max,
                lambda: improvement.lambda,
                condition_holds: condition.as_ref().map(|c| c.holds),
                condition_lhs: condition.as_ref().map(|c| c.lhs),
                condition_rhs: condition.as_ref().map(|c| c.rhs),
                improved: Some(after >= before - 1e-8),
                uncertainty_td_corr: corr,
            })
        };
        reports.push(step().map_err(|e| e.at_iteration(i))?);
    }
    Ok(TabularOutcome { policy, q, target_policy, target_q, belief, reports })
}
