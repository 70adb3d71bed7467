//! Glue between the liquidation environment and the continuous trainer.

use rayon::prelude::*;

use super::baselines::{evaluate_policy, ActionPolicy};
use super::env::{initial_state, LiquidationConfig, LiquidationState};
use super::features::LiquidationFeatures;
use crate::data::OfflineDataset;
use crate::dynamics::{
    fit_gaussian, generate_synthetic, FeatureMap, GaussianFitConfig, GaussianFitReport, GaussianModel, ModelEnsemble,
    StateBox,
};
use crate::engine::{
    train_continuous, uncertainty_td_pairs, ContinuousOutcome, ContinuousProblem, LinearSoftPolicy, PspoConfig,
};
use crate::error::Result;
use crate::seed::{derive_seed, rng_from_seed, Rng};

pub type LiquidationModel = GaussianModel<LiquidationFeatures>;
pub type LiquidationEnsemble = ModelEnsemble<LiquidationModel>;

/// `[0, T] × [0, m0] × [0, rate_cap]`.
pub fn state_box(config: &LiquidationConfig) -> StateBox {
    StateBox::new(vec![0.0, 0.0, 0.0], vec![config.horizon as f64, config.initial_inventory, config.rate_cap])
        .expect("box bounds are ordered")
}

/// Terminal test on model transitions: the horizon is reached, the action
/// converts everything, or the predicted inventory is below 0.1% of `m0`.
pub fn is_terminal(config: &LiquidationConfig, s: &[f64], a: usize, s2: &[f64]) -> bool {
    s[0] + 1.0 >= config.horizon as f64 - 1e-6 || config.fraction(a) == 1.0 || s2[1] <= 1e-3 * config.initial_inventory
}

/// Largest one-step reward, `m0 · rate_cap`.
pub fn reward_bound(config: &LiquidationConfig) -> f64 {
    config.initial_inventory * config.rate_cap
}

/// Bootstrap pool of `model_pool_size` Gaussian fits, `ensemble_size` of
/// which are kept. Member `j` uses `derive_seed(seed, "ensemble_member", j)`.
pub fn fit_liquidation_ensemble(
    dataset: &OfflineDataset<Vec<f64>>,
    config: &LiquidationConfig,
    pspo: &PspoConfig,
    fit: &GaussianFitConfig,
    seed: u64,
) -> Result<(LiquidationEnsemble, Vec<GaussianFitReport>)> {
    let features = LiquidationFeatures::from_config(config);
    let sbox = state_box(config);
    let seeds: Vec<u64> = (0..pspo.model_pool_size as u64).map(|j| derive_seed(seed, "ensemble_member", j)).collect();
    let fitted = seeds
        .par_iter()
        .map(|&s| {
            fit_gaussian(
                dataset,
                features.clone(),
                sbox.clone(),
                config.n_actions(),
                fit,
                Some(derive_seed(s, "bootstrap", 0)),
                derive_seed(s, "init", 0),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (pool, reports): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let mut rng = rng_from_seed(derive_seed(seed, "ensemble_subsample", 0));
    Ok((ModelEnsemble::subsample(pool, seeds, pspo.ensemble_size, &mut rng)?, reports))
}

/// A trained linear soft policy acting in the true environment.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub policy: LinearSoftPolicy,
    pub features: LiquidationFeatures,
}

impl ActionPolicy for LearnedPolicy {
    fn act(&self, _config: &LiquidationConfig, state: &LiquidationState, rng: &mut Rng) -> usize {
        self.policy.sample(&self.features.features(&state.to_vec()), rng)
    }
}

/// Inputs of one liquidation training run.
pub struct LiquidationRun<'a> {
    pub env: &'a LiquidationConfig,
    pub dataset: &'a OfflineDataset<Vec<f64>>,
    pub ensemble: &'a LiquidationEnsemble,
    /// Episodes per periodic evaluation (used when `eval_every > 0`).
    pub eval_episodes: usize,
}

/// Runs the continuous trainer on the liquidation task with the analytic
/// behavior probabilities as reference and 256 simulated initial states
/// for the regularized-return estimate.
pub fn train_liquidation(run: &LiquidationRun<'_>, pspo: &PspoConfig, seed: u64) -> Result<ContinuousOutcome> {
    let features = LiquidationFeatures::from_config(run.env);
    let reference = run.env.behavior_probs();
    let mut rng = rng_from_seed(derive_seed(seed, "start_states", 0));
    let starts: Vec<Vec<f64>> = (0..256).map(|_| initial_state(run.env, &mut rng).to_vec()).collect();
    let env = run.env;
    let eval_seed = derive_seed(seed, "periodic_eval", 0);
    let evaluate = |policy: &LinearSoftPolicy| -> Result<f64> {
        let learned = LearnedPolicy { policy: policy.clone(), features: features.clone() };
        Ok(evaluate_policy(env, &learned, run.eval_episodes, eval_seed)?.mean)
    };
    let problem = ContinuousProblem {
        dataset: run.dataset,
        ensemble: run.ensemble,
        features: &features,
        reference: &reference,
        r_max: reward_bound(env),
        start_states: &starts,
        is_done: |s: &[f64], a: usize, s2: &[f64]| is_terminal(env, s, a, s2),
        evaluate: Some(&evaluate),
    };
    train_continuous(&problem, pspo, seed)
}

/// Uncertainty and TD target for `n_pairs` state-action pairs: half are
/// real records, half come from rollouts of the trained target policy
/// under the final belief. Targets use the trained target critic.
pub fn uncertainty_diagnostic(
    run: &LiquidationRun<'_>,
    pspo: &PspoConfig,
    outcome: &ContinuousOutcome,
    n_pairs: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let env = run.env;
    let features = LiquidationFeatures::from_config(env);
    let mut rng = rng_from_seed(derive_seed(seed, "diagnostic_pairs", 0));
    let n_real = n_pairs / 2;
    let mut pairs: Vec<(Vec<f64>, usize)> =
        run.dataset.minibatch(n_real, &mut rng)?.into_iter().map(|r| (r.s, r.a)).collect();
    let policy = &outcome.target_policy;
    let mut round = 0;
    while pairs.len() < n_pairs {
        let starts: Vec<Vec<f64>> =
            run.dataset.minibatch(n_pairs - pairs.len(), &mut rng)?.into_iter().map(|r| r.s).collect();
        let synthetic = generate_synthetic(
            run.ensemble,
            &outcome.belief,
            |s: &Vec<f64>, rng: &mut Rng| policy.sample(&features.features(s), rng),
            |s: &Vec<f64>, a, s2: &Vec<f64>| is_terminal(env, s, a, s2),
            &starts,
            pspo.rollout_horizon,
            derive_seed(seed, "diagnostic_rollouts", round),
        )?;
        let missing = n_pairs - pairs.len();
        pairs.extend(synthetic.into_iter().take(missing).map(|r| (r.s, r.a)));
        round += 1;
    }
    let reference = env.behavior_probs();
    let problem = ContinuousProblem {
        dataset: run.dataset,
        ensemble: run.ensemble,
        features: &features,
        reference: &reference,
        r_max: reward_bound(env),
        start_states: &[],
        is_done: |s: &[f64], a: usize, s2: &[f64]| is_terminal(env, s, a, s2),
        evaluate: None,
    };
    uncertainty_td_pairs(&problem, pspo, &outcome.belief, &outcome.target_q, &pairs, derive_seed(seed, "diagnostic", 0))
}
