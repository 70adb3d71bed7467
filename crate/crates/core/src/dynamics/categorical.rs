//! Count-based categorical transition models for the tabular track.

use serde::{Deserialize, Serialize};

use super::DynamicsModel;
use crate::data::{OfflineDataset, TransitionRecord};
use crate::error::{PspoError, Result};
use crate::mdp::{Table, TabularMdp};
use crate::scalar::Scalar;
use crate::seed::{rng_from_seed, sample_categorical, Rng};

/// Smoothed transition counts and empirical mean rewards.
///
/// Rows are `(c + δ) / Σ(c + δ)`. A row with no counts and `δ = 0` has no
/// estimate and falls back to uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", try_from = "CategoricalParts<F>", into = "CategoricalParts<F>")]
pub struct CategoricalModel<F> {
    n_states: usize,
    n_actions: usize,
    counts: Vec<F>,
    smoothing: F,
    reward_estimate: Table<F>,
    probs: Vec<F>,
}

/// On-disk form: everything except the derived probability rows.
#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct CategoricalParts<F> {
    n_states: usize,
    n_actions: usize,
    counts: Vec<F>,
    smoothing: F,
    reward_estimate: Table<F>,
}

impl<F: Scalar> TryFrom<CategoricalParts<F>> for CategoricalModel<F> {
    type Error = PspoError;

    fn try_from(p: CategoricalParts<F>) -> Result<Self> {
        Self::from_counts(p.n_states, p.n_actions, p.counts, p.smoothing, p.reward_estimate)
    }
}

impl<F: Scalar> From<CategoricalModel<F>> for CategoricalParts<F> {
    fn from(m: CategoricalModel<F>) -> Self {
        Self {
            n_states: m.n_states,
            n_actions: m.n_actions,
            counts: m.counts,
            smoothing: m.smoothing,
            reward_estimate: m.reward_estimate,
        }
    }
}

impl<F: Scalar> CategoricalModel<F> {
    pub fn from_counts(
        n_states: usize,
        n_actions: usize,
        counts: Vec<F>,
        smoothing: F,
        reward_estimate: Table<F>,
    ) -> Result<Self> {
        if counts.len() != n_states * n_actions * n_states
            || reward_estimate.rows() != n_states
            || reward_estimate.cols() != n_actions
        {
            return Err(PspoError::DimensionMismatch("categorical model tables".into()));
        }
        if counts.iter().any(|&c| !(c >= F::zero()) || !c.is_finite()) || !(smoothing >= F::zero()) {
            return Err(PspoError::InvalidInput("counts and smoothing must be non-negative".into()));
        }
        let mut model = Self { n_states, n_actions, counts, smoothing, reward_estimate, probs: Vec::new() };
        model.refresh();
        Ok(model)
    }

    /// Model that reproduces `mdp` exactly (counts are the probabilities).
    pub fn from_mdp(mdp: &TabularMdp<F>) -> Self {
        Self::from_counts(mdp.n_states(), mdp.n_actions(), mdp.transition().to_vec(), F::zero(), mdp.reward().clone())
            .expect("valid MDP gives a valid model")
    }

    fn refresh(&mut self) {
        let ns = self.n_states;
        let mut probs = Vec::with_capacity(self.counts.len());
        for row in self.counts.chunks(ns) {
            let total: F = row.iter().map(|&c| c + self.smoothing).sum();
            if total > F::zero() {
                probs.extend(row.iter().map(|&c| (c + self.smoothing) / total));
            } else {
                probs.extend(std::iter::repeat_n(F::one() / F::of(ns as f64), ns));
            }
        }
        self.probs = probs;
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn smoothing(&self) -> F {
        self.smoothing
    }

    pub fn counts(&self, s: usize, a: usize) -> &[F] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.counts[start..start + self.n_states]
    }

    /// Smoothed next-state distribution `T̂(·|s,a)`.
    pub fn next_row(&self, s: usize, a: usize) -> &[F] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> F {
        self.reward_estimate.get(s, a)
    }

    pub fn reward_table(&self) -> &Table<F> {
        &self.reward_estimate
    }

    /// Flat `T̂[s][a][s']`.
    pub fn transition(&self) -> &[F] {
        &self.probs
    }
}

impl<F: Scalar> DynamicsModel for CategoricalModel<F> {
    type State = usize;
    const KIND: &'static str = "categorical";

    fn sample_next(&self, state: &usize, action: usize, rng: &mut Rng) -> (usize, f64) {
        let s2 = sample_categorical(self.next_row(*state, action), rng);
        (s2, self.reward(*state, action).to_f64_lossy())
    }

    fn predicted_mean(&self, state: &usize, action: usize) -> Vec<f64> {
        self.next_row(*state, action).iter().map(|p| p.to_f64_lossy()).collect()
    }

    fn next_distribution(&self, state: &usize, action: usize) -> Option<Vec<f64>> {
        Some(self.predicted_mean(state, action))
    }
}

/// Count MLE with pseudo-count `smoothing`. With `bootstrap_seed`, counts
/// come from a same-size resample with replacement; without it the dataset
/// is used as is. Rewards are per-`(s,a)` empirical means (0 if unvisited).
pub fn fit_categorical<F: Scalar>(
    dataset: &OfflineDataset<usize>,
    n_states: usize,
    n_actions: usize,
    smoothing: F,
    bootstrap_seed: Option<u64>,
) -> Result<CategoricalModel<F>> {
    if dataset.is_empty() {
        return Err(PspoError::EmptyBatch);
    }
    for (i, r) in dataset.records().iter().enumerate() {
        if r.s >= n_states || r.s2 >= n_states || r.a >= n_actions {
            return Err(PspoError::IndexOutOfRange(format!(
                "record {i}: ({}, {}, {}) outside {n_states} states x {n_actions} actions",
                r.s, r.a, r.s2
            )));
        }
    }
    let sample: Vec<&TransitionRecord<usize>> = match bootstrap_seed {
        Some(seed) => dataset.bootstrap(&mut rng_from_seed(seed)),
        None => dataset.records().iter().collect(),
    };
    let mut counts = vec![F::zero(); n_states * n_actions * n_states];
    let mut reward_sum = vec![0.0f64; n_states * n_actions];
    let mut visits = vec![0usize; n_states * n_actions];
    for r in sample {
        let sa = r.s * n_actions + r.a;
        counts[sa * n_states + r.s2] += F::one();
        reward_sum[sa] += r.r;
        visits[sa] += 1;
    }
    let reward = Table::from_fn(n_states, n_actions, |s, a| {
        let sa = s * n_actions + a;
        if visits[sa] == 0 {
            F::zero()
        } else {
            F::of(reward_sum[sa] / visits[sa] as f64)
        }
    });
    CategoricalModel::from_counts(n_states, n_actions, counts, smoothing, reward)
}
