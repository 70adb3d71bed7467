//! Optimal liquidation of a fixed inventory under a mean-reverting exchange
//! rate.
//!
//! State `s = (t, m, p)`: step index, remaining inventory, exchange rate.
//! Action 0 holds; action `k ≥ 1` converts fraction `convert_fractions[k-1]`
//! of the remaining inventory at the current rate.

mod baselines;
mod env;
mod features;
mod score;
mod training;

pub use baselines::{
    evaluate_policy, run_episode, tune_threshold, ActionPolicy, BehaviorPolicy, EpisodeSummary, Evaluation, Immediate,
    ThresholdPolicy, UniformTwap,
};
pub use env::{
    env_step, generate_liquidation_dataset, initial_state, ou_step, ou_transition, LiquidationConfig, LiquidationState,
    OuParams, TerminalRule,
};
pub use features::{LiquidationFeatures, FEATURE_DIM};
pub use score::{normalized_score, ReferenceScores, LIQUIDATION};
pub use training::{
    fit_liquidation_ensemble, is_terminal, reward_bound, state_box, train_liquidation, uncertainty_diagnostic,
    LearnedPolicy, LiquidationEnsemble, LiquidationModel, LiquidationRun,
};
