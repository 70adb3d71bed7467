use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{env_step, initial_state, LiquidationConfig, LiquidationState};
use super::score::{normalized_score, LIQUIDATION};
use crate::error::Result;
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::stats;

/// Anything that picks an action index in a liquidation state.
pub trait ActionPolicy: Sync {
    fn act(&self, config: &LiquidationConfig, state: &LiquidationState, rng: &mut Rng) -> usize;
}

/// The data-collecting policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct BehaviorPolicy;

impl ActionPolicy for BehaviorPolicy {
    fn act(&self, config: &LiquidationConfig, _state: &LiquidationState, rng: &mut Rng) -> usize {
        config.sample_behavior_action(rng)
    }
}

/// Converts everything at `t = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Immediate;

impl ActionPolicy for Immediate {
    fn act(&self, config: &LiquidationConfig, _state: &LiquidationState, _rng: &mut Rng) -> usize {
        config.n_actions() - 1
    }
}

/// Tracks the straight-line schedule `m0 (T − t) / T`: each step picks the
/// grid fraction (hold counts as 0) nearest to the fraction of remaining
/// inventory that would land on the schedule.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformTwap;

impl UniformTwap {
    pub fn target_fraction(config: &LiquidationConfig, state: &LiquidationState) -> f64 {
        let remaining_steps = config.horizon.saturating_sub(state.t + 1) as f64;
        let desired = config.initial_inventory * remaining_steps / config.horizon as f64;
        (1.0 - desired / state.inventory).clamp(0.0, 1.0)
    }
}

impl ActionPolicy for UniformTwap {
    fn act(&self, config: &LiquidationConfig, state: &LiquidationState, _rng: &mut Rng) -> usize {
        let want = Self::target_fraction(config, state);
        (0..config.n_actions())
            .min_by(|&a, &b| {
                let da = (config.fraction(a) - want).abs();
                let db = (config.fraction(b) - want).abs();
                da.total_cmp(&db)
            })
            .expect("non-empty action grid")
    }
}

/// Converts everything once the rate reaches `threshold`, or at the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub threshold: f64,
}

impl ActionPolicy for ThresholdPolicy {
    fn act(&self, config: &LiquidationConfig, state: &LiquidationState, _rng: &mut Rng) -> usize {
        if state.rate >= self.threshold || state.t + 1 == config.horizon {
            config.n_actions() - 1
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub total_return: f64,
    pub converted: f64,
    pub final_inventory: f64,
    pub steps: usize,
}

pub fn run_episode<P: ActionPolicy + ?Sized>(
    config: &LiquidationConfig,
    policy: &P,
    rng: &mut Rng,
) -> Result<EpisodeSummary> {
    let mut s = initial_state(config, rng);
    let mut total_return = 0.0;
    let mut converted = 0.0;
    let mut steps = 0;
    loop {
        let a = policy.act(config, &s, rng);
        let before = s.inventory;
        let (s2, r, done) = env_step(config, &s, a, rng)?;
        total_return += r;
        converted += before - s2.inventory;
        steps += 1;
        s = s2;
        if done {
            return Ok(EpisodeSummary { total_return, converted, final_inventory: s.inventory, steps });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub score: f64,
}

/// `n_episodes` episodes in parallel; episode `e` uses seed
/// `derive_seed(seed, "eval_episode", e)`.
pub fn evaluate_policy<P: ActionPolicy + ?Sized>(
    config: &LiquidationConfig,
    policy: &P,
    n_episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    let returns: Vec<f64> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|e| {
            let mut rng = rng_from_seed(derive_seed(seed, "eval_episode", e));
            run_episode(config, policy, &mut rng).map(|s| s.total_return)
        })
        .collect::<Result<_>>()?;
    let mean = stats::mean(&returns);
    Ok(Evaluation { std: stats::std_dev(&returns), score: normalized_score(mean, LIQUIDATION)?, mean, returns })
}

/// Best threshold on `grid` by mean return over fresh simulations.
pub fn tune_threshold(
    config: &LiquidationConfig,
    grid: &[f64],
    n_episodes: usize,
    seed: u64,
) -> Result<(ThresholdPolicy, f64)> {
    let mut best = (ThresholdPolicy { threshold: f64::INFINITY }, f64::NEG_INFINITY);
    for (i, &threshold) in grid.iter().enumerate() {
        let p = ThresholdPolicy { threshold };
        let eval = evaluate_policy(config, &p, n_episodes, derive_seed(seed, "threshold", i as u64))?;
        if eval.mean > best.1 {
            best = (p, eval.mean);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liquidation::env::{OuParams, TerminalRule};

    fn deterministic() -> LiquidationConfig {
        LiquidationConfig { ou: OuParams { sigma: 0.0, p0_std: 0.0, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn immediate_returns_initial_rate_times_inventory() {
        let s = run_episode(&deterministic(), &Immediate, &mut rng_from_seed(0)).unwrap();
        assert_eq!(s.total_return, 100.0);
        assert_eq!(s.steps, 1);
    }

    #[test]
    fn twap_matches_hand_rolled_simulation() {
        let cfg = deterministic();
        let s = run_episode(&cfg, &UniformTwap, &mut rng_from_seed(0)).unwrap();
        // Hand-rolled: deterministic rate path, same schedule rule.
        let (mut m, mut p, mut total) = (100.0f64, 1.0f64, 0.0);
        for t in 0..100 {
            let desired = 100.0 * (99 - t) as f64 / 100.0;
            let want = (1.0 - desired / m).clamp(0.0, 1.0);
            let f =
                (0..=10).map(|k| k as f64 / 10.0).min_by(|a, b| (a - want).abs().total_cmp(&(b - want).abs())).unwrap();
            let sold = if f == 1.0 { m } else { f * m };
            total += sold * p;
            m -= sold;
            p = 1.5 + (p - 1.5) * (-0.05f64).exp();
            if m == 0.0 {
                break;
            }
        }
        assert!((s.total_return - total).abs() < 1e-9);
        assert_eq!(s.final_inventory, 0.0);
        // A uniform schedule over a rising rate path beats selling at once.
        assert!(s.total_return > 110.0);
    }

    #[test]
    fn conservation_with_forced_liquidation() {
        let cfg = LiquidationConfig { terminal_rule: TerminalRule::ForceLiquidate, ..Default::default() };
        for seed in 0..20 {
            let s = run_episode(&cfg, &BehaviorPolicy, &mut rng_from_seed(seed)).unwrap();
            assert!((s.converted - 100.0).abs() < 1e-9);
            assert_eq!(s.final_inventory, 0.0);
        }
    }

    #[test]
    fn threshold_beats_immediate() {
        let cfg = LiquidationConfig::default();
        let grid: Vec<f64> = (0..=20).map(|k| 1.2 + 0.05 * k as f64).collect();
        let (best, _) = tune_threshold(&cfg, &grid, 500, 1).unwrap();
        let thr = evaluate_policy(&cfg, &best, 10_000, 2).unwrap();
        let imm = evaluate_policy(&cfg, &Immediate, 10_000, 2).unwrap();
        assert!(thr.mean >= imm.mean, "{} vs {}", thr.mean, imm.mean);
        assert!((imm.mean - 100.0).abs() < 0.2);
    }
}
