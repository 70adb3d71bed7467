//! Per-iteration training diagnostics.

use serde::{Deserialize, Serialize};

/// One row of the training log. Optional fields are absent when the
/// quantity is unavailable on the track or was not requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub posterior: Vec<f64>,
    pub mean_target: f64,
    pub target_variance: f64,
    pub variance_bound: f64,
    /// `J̃(π_{i+1})`: exact under the belief mixture on the tabular track,
    /// a Monte-Carlo estimate otherwise.
    pub regularized_return: f64,
    /// `J(π_i)` under the iteration-`i` belief mixture.
    pub return_before: Option<f64>,
    /// `J(π_{i+1})` under the same mixture.
    pub return_after: Option<f64>,
    /// `J(π_{i+1})` under the true dynamics, when known.
    pub true_return: Option<f64>,
    /// Aggregated `KL(π_{i+1} ‖ π_i)` used by the trust region.
    pub kl_step: f64,
    pub kl_max: f64,
    pub lambda: f64,
    pub condition_holds: Option<bool>,
    pub condition_lhs: Option<f64>,
    pub condition_rhs: Option<f64>,
    /// `J(π_{i+1}) ≥ J(π_i) − 1e-8` on the belief mixture.
    pub improved: Option<bool>,
    /// Spearman correlation between model disagreement and TD targets on
    /// the iteration's batch.
    pub uncertainty_td_corr: Option<f64>,
}

impl IterationReport {
    pub fn variance_within_bound(&self) -> bool {
        self.target_variance <= self.variance_bound
    }

    pub fn within_trust_region(&self, epsilon: f64) -> bool {
        self.kl_max <= epsilon + 1e-6
    }

    /// Every scalar is finite and the KL values are non-negative.
    pub fn is_well_formed(&self) -> bool {
        let opt = [
            self.return_before,
            self.return_after,
            self.true_return,
            self.condition_lhs,
            self.condition_rhs,
            self.uncertainty_td_corr,
        ];
        [
            self.mean_target,
            self.target_variance,
            self.variance_bound,
            self.regularized_return,
            self.kl_step,
            self.kl_max,
            self.lambda,
        ]
        .iter()
        .chain(opt.iter().flatten())
        .chain(&self.posterior)
        .all(|v| v.is_finite())
            && self.kl_step >= 0.0
            && self.kl_max >= 0.0
    }
}
