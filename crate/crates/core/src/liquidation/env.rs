use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{OfflineDataset, TransitionRecord};
use crate::error::{PspoError, Result};
use crate::seed::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuParams {
    pub theta: f64,
    pub mu_rate: f64,
    pub sigma: f64,
    pub dt: f64,
    pub p0_mean: f64,
    pub p0_std: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self { theta: 0.05, mu_rate: 1.5, sigma: 0.2, dt: 1.0, p0_mean: 1.0, p0_std: 0.05 }
    }
}

impl OuParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.sigma >= 0.0 && self.dt > 0.0 && self.p0_std >= 0.0) {
            return Err(PspoError::InvalidInput(
                "OU parameters need theta > 0, sigma >= 0, dt > 0, p0_std >= 0".into(),
            ));
        }
        Ok(())
    }

    /// `σ² / (2θ)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.theta)
    }

    /// Mean and standard deviation of one exact transition from `rate`.
    pub fn transition_moments(&self, rate: f64) -> (f64, f64) {
        let decay = (-self.theta * self.dt).exp();
        let mean = self.mu_rate + (rate - self.mu_rate) * decay;
        let std = self.sigma * ((1.0 - decay * decay) / (2.0 * self.theta)).sqrt();
        (mean, std)
    }
}

/// Exact OU transition over `dt` without the zero floor.
pub fn ou_transition(params: &OuParams, rate: f64, rng: &mut Rng) -> f64 {
    let (mean, std) = params.transition_moments(rate);
    let xi: f64 = StandardNormal.sample(rng);
    mean + std * xi
}

/// [`ou_transition`] clamped at zero; the environment's rate update.
pub fn ou_step(params: &OuParams, rate: f64, rng: &mut Rng) -> f64 {
    ou_transition(params, rate, rng).max(0.0)
}

/// Disposal of inventory left at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalRule {
    #[default]
    ExpireWorthless,
    /// The last step also converts whatever remains at the decision rate.
    ForceLiquidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiquidationConfig {
    pub horizon: usize,
    pub initial_inventory: f64,
    /// Convert fractions, strictly increasing in `(0, 1]` and ending at 1.
    pub convert_fractions: Vec<f64>,
    pub terminal_rule: TerminalRule,
    pub ou: OuParams,
    pub behavior_hold_prob: f64,
    /// Upper rate bound for features and model-output clamping.
    pub rate_cap: f64,
}

impl Default for LiquidationConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            initial_inventory: 100.0,
            convert_fractions: (1..=10).map(|k| k as f64 / 10.0).collect(),
            terminal_rule: TerminalRule::ExpireWorthless,
            ou: OuParams::default(),
            behavior_hold_prob: 0.8,
            rate_cap: 5.0,
        }
    }
}

impl LiquidationConfig {
    pub fn validate(&self) -> Result<()> {
        self.ou.validate()?;
        let f = &self.convert_fractions;
        if self.horizon == 0 || !(self.initial_inventory > 0.0) {
            return Err(PspoError::InvalidInput("need horizon >= 1 and positive inventory".into()));
        }
        if f.is_empty() || f[0] <= 0.0 || f.windows(2).any(|w| w[0] >= w[1]) || f[f.len() - 1] != 1.0 {
            return Err(PspoError::InvalidInput(
                "convert fractions must increase strictly within (0, 1] and end at 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.behavior_hold_prob) {
            return Err(PspoError::InvalidInput("behavior_hold_prob must lie in [0, 1]".into()));
        }
        if !(self.rate_cap > 0.0) {
            return Err(PspoError::InvalidInput("rate_cap must be positive".into()));
        }
        Ok(())
    }

    /// Hold plus one action per convert fraction.
    pub fn n_actions(&self) -> usize {
        self.convert_fractions.len() + 1
    }

    /// Converted fraction of action `a` (0 for hold).
    pub fn fraction(&self, a: usize) -> f64 {
        if a == 0 {
            0.0
        } else {
            self.convert_fractions[a - 1]
        }
    }

    /// Analytic behavior action probabilities: hold with
    /// `behavior_hold_prob`, the rest split evenly over convert actions.
    pub fn behavior_probs(&self) -> Vec<f64> {
        let k = self.convert_fractions.len() as f64;
        let mut p = vec![(1.0 - self.behavior_hold_prob) / k; self.n_actions()];
        p[0] = self.behavior_hold_prob;
        p
    }

    pub fn sample_behavior_action(&self, rng: &mut Rng) -> usize {
        if rng.random::<f64>() < self.behavior_hold_prob {
            0
        } else {
            1 + rng.random_range(0..self.convert_fractions.len())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiquidationState {
    pub t: usize,
    pub inventory: f64,
    pub rate: f64,
}

impl LiquidationState {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.t as f64, self.inventory, self.rate]
    }
}

/// `t = 0`, full inventory, `p0 ∼ N(p0_mean, p0_std²)` clamped at zero.
pub fn initial_state(config: &LiquidationConfig, rng: &mut Rng) -> LiquidationState {
    let xi: f64 = StandardNormal.sample(rng);
    LiquidationState {
        t: 0,
        inventory: config.initial_inventory,
        rate: (config.ou.p0_mean + config.ou.p0_std * xi).max(0.0),
    }
}

/// Applies action `action` in `state`. Returns the next state, the amount
/// of Currency B received, and whether the episode ended.
pub fn env_step(
    config: &LiquidationConfig,
    state: &LiquidationState,
    action: usize,
    rng: &mut Rng,
) -> Result<(LiquidationState, f64, bool)> {
    if state.t >= config.horizon || state.inventory <= 0.0 {
        return Err(PspoError::StepAfterDone);
    }
    if action >= config.n_actions() {
        return Err(PspoError::IndexOutOfRange(format!("action {action}")));
    }
    let f = config.fraction(action);
    let converted = if f == 1.0 { state.inventory } else { f * state.inventory };
    let mut inventory = state.inventory - converted;
    let mut reward = converted * state.rate;
    let t = state.t + 1;
    if t == config.horizon && config.terminal_rule == TerminalRule::ForceLiquidate {
        reward += inventory * state.rate;
        inventory = 0.0;
    }
    let rate = ou_step(&config.ou, state.rate, rng);
    let done = t == config.horizon || inventory == 0.0;
    Ok((LiquidationState { t, inventory, rate }, reward, done))
}

/// Full behavior-policy episodes; episode `e` uses seed
/// `derive_seed(seed, "episode", e)`. States are stored as `[t, m, p]`.
pub fn generate_liquidation_dataset(
    config: &LiquidationConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<OfflineDataset<Vec<f64>>> {
    config.validate()?;
    if n_episodes == 0 {
        return Err(PspoError::InvalidInput("need at least one episode".into()));
    }
    let episodes: Vec<Vec<TransitionRecord<Vec<f64>>>> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|e| {
            let mut rng = rng_from_seed(derive_seed(seed, "episode", e));
            let mut s = initial_state(config, &mut rng);
            let mut out = Vec::with_capacity(config.horizon);
            loop {
                let a = config.sample_behavior_action(&mut rng);
                let (s2, r, done) = env_step(config, &s, a, &mut rng)?;
                out.push(TransitionRecord::real(s.to_vec(), a, r, s2.to_vec(), done));
                if done {
                    return Ok(out);
                }
                s = s2;
            }
        })
        .collect::<Result<_>>()?;
    OfflineDataset::new(episodes.into_iter().flatten().collect())
}
