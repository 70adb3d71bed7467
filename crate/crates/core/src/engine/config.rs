//! Algorithm configuration. Field names are the flat keys of the config file.

use serde::{Deserialize, Serialize};

use super::improvement::KlAggregation;
use crate::error::{PspoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `η_t = c / (t + t0)`: `Σ η_t = ∞`, `Σ η_t² < ∞`.
    RobbinsMonro,
    /// `η_t = c`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub c: f64,
    pub t0: f64,
}

impl Schedule {
    pub fn robbins_monro(c: f64, t0: f64) -> Result<Self> {
        let s = Self { kind: ScheduleKind::RobbinsMonro, c, t0 };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(c: f64) -> Result<Self> {
        let s = Self { kind: ScheduleKind::Constant, c, t0: 1.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(PspoError::InvalidInput("schedule c must be positive".into()));
        }
        if self.kind == ScheduleKind::RobbinsMonro && !(self.t0 >= 1.0) {
            return Err(PspoError::InvalidInput("schedule t0 must be at least 1".into()));
        }
        Ok(())
    }

    pub fn step_size(&self, t: usize) -> f64 {
        match self.kind {
            ScheduleKind::RobbinsMonro => self.c / (t as f64 + self.t0),
            ScheduleKind::Constant => self.c,
        }
    }
}

/// Reading of the "without regularization" ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoRegMode {
    /// Uniform base measure in the backup; no KL-to-μ term in the improvement.
    #[default]
    UniformMu,
    /// `α = 0` everywhere with μ kept as the support of the backup.
    AlphaZero,
}

/// Policy-evaluation step used inside training (tabular track).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// `eval_sweeps` exact applications of the soft optimality operator to
    /// the target critic.
    #[default]
    SoftOptimality,
    /// Exact KL-regularized value of the current policy under the belief
    /// mixture (makes the trust-region step a natural-gradient step).
    ExactRegularized,
    /// One Robbins-Monro update per iteration on the mixed batch.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PspoConfig {
    pub alpha: f64,
    pub epsilon_trust: f64,
    pub beta: f64,
    pub gamma: f64,
    pub ensemble_size: usize,
    pub model_pool_size: usize,
    pub schedule_kind: ScheduleKind,
    pub schedule_c: f64,
    pub schedule_t0: f64,
    pub polyak: f64,
    pub iterations: usize,
    pub rollout_horizon: usize,
    pub real_ratio: f64,
    pub belief_update_every: usize,
    pub average_utilization: bool,
    pub without_regularization: bool,
    pub ablation_no_reg_mode: NoRegMode,
    pub kl_aggregation: KlAggregation,
    pub evaluation: EvaluationMode,
    pub eval_sweeps: usize,
    pub batch_size: usize,
    pub rollout_starts: usize,
    pub smoothing: f64,
    pub consistency_samples: usize,
    pub check_improvement: bool,
    pub fd_step: f64,
    /// Next-state samples per target on the continuous track.
    pub target_samples: usize,
    /// Ridge strength of the linear critic fit, per batch state.
    pub critic_ridge: f64,
    /// True-environment evaluation period in iterations (0 disables).
    pub eval_every: usize,
}

impl Default for PspoConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            epsilon_trust: 0.01,
            beta: 1.0,
            gamma: 0.99,
            ensemble_size: 10,
            model_pool_size: 10,
            schedule_kind: ScheduleKind::RobbinsMonro,
            schedule_c: 1.0,
            schedule_t0: 1.0,
            polyak: 0.005,
            iterations: 1000,
            rollout_horizon: 5,
            real_ratio: 0.5,
            belief_update_every: 1,
            average_utilization: false,
            without_regularization: false,
            ablation_no_reg_mode: NoRegMode::UniformMu,
            kl_aggregation: KlAggregation::Max,
            evaluation: EvaluationMode::SoftOptimality,
            eval_sweeps: 1,
            batch_size: 256,
            rollout_starts: 64,
            smoothing: 1e-3,
            consistency_samples: 8,
            check_improvement: false,
            fd_step: 1e-4,
            target_samples: 8,
            critic_ridge: 1e-3,
            eval_every: 0,
        }
    }
}

impl PspoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(PspoError::InvalidInput(msg.into()));
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.epsilon_trust > 0.0) {
            return bad("epsilon_trust must be positive");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.ensemble_size == 0 || self.model_pool_size < self.ensemble_size {
            return bad("need 1 <= ensemble_size <= model_pool_size");
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return bad("polyak must lie in (0, 1]");
        }
        if self.rollout_horizon == 0 {
            return bad("rollout_horizon must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return bad("real_ratio must lie in [0, 1]");
        }
        if self.belief_update_every == 0 {
            return bad("belief_update_every must be at least 1");
        }
        if self.batch_size == 0 || self.eval_sweeps == 0 || self.consistency_samples == 0 || self.target_samples == 0 {
            return bad("batch_size, eval_sweeps, consistency_samples and target_samples must be positive");
        }
        if !(self.critic_ridge > 0.0) {
            return bad("critic_ridge must be positive");
        }
        if !(self.smoothing >= 0.0) {
            return bad("smoothing must be non-negative");
        }
        self.schedule().validate()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule { kind: self.schedule_kind, c: self.schedule_c, t0: self.schedule_t0 }
    }

    /// Tag for output files: `full`, `average_utilization`,
    /// `without_regularization`, or both ablations joined by `+`.
    pub fn variant(&self) -> String {
        match (self.average_utilization, self.without_regularization) {
            (false, false) => "full".into(),
            (true, false) => "average_utilization".into(),
            (false, true) => "without_regularization".into(),
            (true, true) => "average_utilization+without_regularization".into(),
        }
    }

    /// Regularization strength used in the backup.
    pub fn backup_alpha(&self) -> f64 {
        if self.without_regularization && self.ablation_no_reg_mode == NoRegMode::AlphaZero {
            0.0
        } else {
            self.alpha
        }
    }

    /// Regularization strength used in the improvement objective.
    pub fn improvement_alpha(&self) -> f64 {
        if self.without_regularization {
            0.0
        } else {
            self.alpha
        }
    }

    /// Whether the backup's base measure is replaced by the uniform policy.
    pub fn uniform_reference(&self) -> bool {
        self.without_regularization && self.ablation_no_reg_mode == NoRegMode::UniformMu
    }
}
