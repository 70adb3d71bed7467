//! Finite MDPs, tabular policies and action-value tables.
//!
//! [`TabularMdp`] is the ground truth every oracle in this crate is checked
//! against. Evaluation routines live in [`eval`], soft values and KL
//! divergences in [`soft`], and seeded instance generators in [`random`].

pub mod eval;
pub mod random;
pub mod soft;

use serde::{Deserialize, Serialize};

use crate::error::{PspoError, Result};
use crate::scalar::Scalar;

pub use eval::{
    discounted_occupancy, evaluate_with_reward, exact_policy_eval, expected_return, regularized_policy_eval,
    regularized_return, state_values,
};
pub use soft::{kl_divergence, kl_divergence_rows, soft_value, soft_value_row};

/// Dense row-major `rows × cols` table; serialized as nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<F>>", into = "Vec<Vec<F>>", bound = "F: Scalar")]
pub struct Table<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Table<F> {
    pub fn filled(rows: usize, cols: usize, value: F) -> Self {
        Table { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PspoError::DimensionMismatch(format!(
                "table {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Table { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Table { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Table { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

impl<F: Scalar> TryFrom<Vec<Vec<F>>> for Table<F> {
    type Error = PspoError;

    fn try_from(rows: Vec<Vec<F>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PspoError::DimensionMismatch("ragged table".into()));
        }
        Ok(Table { rows: n, cols, data: rows.into_iter().flatten().collect() })
    }
}

impl<F: Scalar> From<Table<F>> for Vec<Vec<F>> {
    fn from(t: Table<F>) -> Self {
        t.data.chunks(t.cols.max(1)).map(<[F]>::to_vec).collect()
    }
}

fn check_simplex<F: Scalar>(row: &[F], what: &str) -> Result<()> {
    let tol = F::of(F::SIMPLEX_TOL);
    if row.iter().any(|&p| p < F::zero() || !p.is_finite()) {
        return Err(PspoError::InvalidInput(format!("{what}: negative or non-finite entry")));
    }
    let total: F = row.iter().copied().sum();
    if (total - F::one()).abs() > tol {
        return Err(PspoError::InvalidInput(format!("{what}: sums to {total}, expected 1")));
    }
    Ok(())
}

/// Exact finite MDP `(S, A, T, r, ρ0, γ)` with reward bound `r_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabularMdpJson<F>", into = "TabularMdpJson<F>", bound = "F: Scalar")]
pub struct TabularMdp<F> {
    n_states: usize,
    n_actions: usize,
    /// `T[s][a][s']`, flattened.
    transition: Vec<F>,
    reward: Table<F>,
    gamma: F,
    rho0: Vec<F>,
    r_max: F,
}

impl<F: Scalar> TabularMdp<F> {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<F>,
        reward: Table<F>,
        gamma: F,
        rho0: Vec<F>,
        r_max: F,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(PspoError::InvalidInput("an MDP needs at least one state and one action".into()));
        }
        if transition.len() != n_states * n_actions * n_states
            || reward.rows() != n_states
            || reward.cols() != n_actions
            || rho0.len() != n_states
        {
            return Err(PspoError::DimensionMismatch(format!("MDP with {n_states} states and {n_actions} actions")));
        }
        if !(gamma >= F::zero() && gamma < F::one()) {
            return Err(PspoError::InvalidInput(format!("discount {gamma} outside [0, 1)")));
        }
        if !(r_max > F::zero()) {
            return Err(PspoError::InvalidInput("r_max must be positive".into()));
        }
        let mdp = TabularMdp { n_states, n_actions, transition, reward, gamma, rho0, r_max };
        for s in 0..n_states {
            for a in 0..n_actions {
                check_simplex(mdp.next_row(s, a), &format!("T[{s}][{a}]"))?;
            }
        }
        check_simplex(&mdp.rho0, "rho0")?;
        let slack = F::of(F::SIMPLEX_TOL) * r_max;
        if mdp.reward.as_slice().iter().any(|r| !r.is_finite() || r.abs() > r_max + slack) {
            return Err(PspoError::InvalidInput(format!("reward exceeds r_max = {r_max}")));
        }
        Ok(mdp)
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn gamma(&self) -> F {
        self.gamma
    }

    #[inline]
    pub fn r_max(&self) -> F {
        self.r_max
    }

    pub fn rho0(&self) -> &[F] {
        &self.rho0
    }

    pub fn reward(&self) -> &Table<F> {
        &self.reward
    }

    #[inline]
    pub fn next_row(&self, s: usize, a: usize) -> &[F] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn transition(&self) -> &[F] {
        &self.transition
    }

    /// Copy of this MDP with a different transition tensor (validated).
    pub fn with_transition(&self, transition: Vec<F>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            transition,
            self.reward.clone(),
            self.gamma,
            self.rho0.clone(),
            self.r_max,
        )
    }

    /// Copy of this MDP with a different reward table (validated).
    pub fn with_reward(&self, reward: Table<F>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward,
            self.gamma,
            self.rho0.clone(),
            self.r_max,
        )
    }

    pub fn with_gamma(&self, gamma: F) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            gamma,
            self.rho0.clone(),
            self.r_max,
        )
    }

    pub(crate) fn check_policy(&self, policy: &SoftPolicy<F>) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(PspoError::DimensionMismatch(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

/// JSON layout of [`TabularMdp`]: `transition[s][a][s']`, `reward[s][a]`.
#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct TabularMdpJson<F> {
    n_states: usize,
    n_actions: usize,
    gamma: F,
    r_max: F,
    rho0: Vec<F>,
    reward: Vec<Vec<F>>,
    transition: Vec<Vec<Vec<F>>>,
}

impl<F: Scalar> TryFrom<TabularMdpJson<F>> for TabularMdp<F> {
    type Error = PspoError;

    fn try_from(j: TabularMdpJson<F>) -> Result<Self> {
        let transition: Vec<F> = j.transition.into_iter().flatten().flatten().collect();
        TabularMdp::new(j.n_states, j.n_actions, transition, Table::try_from(j.reward)?, j.gamma, j.rho0, j.r_max)
    }
}

impl<F: Scalar> From<TabularMdp<F>> for TabularMdpJson<F> {
    fn from(m: TabularMdp<F>) -> Self {
        let ns = m.n_states;
        let transition =
            m.transition.chunks(m.n_actions * ns).map(|block| block.chunks(ns).map(<[F]>::to_vec).collect()).collect();
        TabularMdpJson {
            n_states: ns,
            n_actions: m.n_actions,
            gamma: m.gamma,
            r_max: m.r_max,
            rho0: m.rho0,
            reward: m.reward.into(),
            transition,
        }
    }
}

/// Categorical policy `π[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct SoftPolicy<F> {
    probs: Table<F>,
}

impl<F: Scalar> SoftPolicy<F> {
    pub fn new(probs: Table<F>) -> Result<Self> {
        for s in 0..probs.rows() {
            check_simplex(probs.row(s), &format!("policy row {s}"))?;
        }
        Ok(SoftPolicy { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        SoftPolicy { probs: Table::filled(n_states, n_actions, F::one() / F::of(n_actions as f64)) }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        if actions.iter().any(|&a| a >= n_actions) {
            return Err(PspoError::IndexOutOfRange("action".into()));
        }
        Ok(SoftPolicy {
            probs: Table::from_fn(actions.len(), n_actions, |s, a| if actions[s] == a { F::one() } else { F::zero() }),
        })
    }

    /// Row-wise softmax of a logit table.
    pub fn from_logits(logits: &Table<F>) -> Self {
        let mut probs = logits.clone();
        for s in 0..probs.rows() {
            crate::scalar::softmax_in_place(probs.row_mut(s));
        }
        SoftPolicy { probs }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.probs.rows()
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.probs.cols()
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[F] {
        self.probs.row(s)
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> F {
        self.probs.get(s, a)
    }

    pub fn table(&self) -> &Table<F> {
        &self.probs
    }

    /// True when every entry is strictly positive.
    pub fn is_strictly_positive(&self) -> bool {
        self.probs.as_slice().iter().all(|&p| p > F::zero())
    }

    /// Convex combination `τ·self + (1-τ)·other` (rows stay on the simplex).
    pub fn polyak_towards(&self, target: &Self, tau: F) -> Self {
        let data = self
            .probs
            .as_slice()
            .iter()
            .zip(target.probs.as_slice())
            .map(|(&cur, &tgt)| tau * cur + (F::one() - tau) * tgt)
            .collect();
        SoftPolicy { probs: Table::from_flat(self.n_states(), self.n_actions(), data).expect("same shape") }
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        crate::scalar::max_abs_diff(self.probs.as_slice(), other.probs.as_slice())
    }
}

/// Tabular action values `Q[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct QFunction<F> {
    values: Table<F>,
}

impl<F: Scalar> QFunction<F> {
    pub fn new(values: Table<F>) -> Result<Self> {
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(PspoError::InvalidInput("Q must be finite".into()));
        }
        Ok(QFunction { values })
    }

    pub fn constant(n_states: usize, n_actions: usize, c: F) -> Self {
        QFunction { values: Table::filled(n_states, n_actions, c) }
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::constant(n_states, n_actions, F::zero())
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> F {
        self.values.get(s, a)
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: F) {
        self.values.set(s, a, v);
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[F] {
        self.values.row(s)
    }

    pub fn table(&self) -> &Table<F> {
        &self.values
    }

    pub fn shifted(&self, c: F) -> Self {
        QFunction { values: self.values.map(|v| v + c) }
    }

    /// `‖self − other‖_∞`.
    pub fn max_norm_diff(&self, other: &Self) -> F {
        assert!(self.values.same_shape(&other.values));
        crate::scalar::max_abs_diff(self.values.as_slice(), other.values.as_slice())
    }

    pub fn max_norm(&self) -> F {
        self.values.as_slice().iter().fold(F::zero(), |m, v| m.max(v.abs()))
    }

    pub fn polyak_towards(&self, target: &Self, tau: F) -> Self {
        let data = self
            .values
            .as_slice()
            .iter()
            .zip(target.values.as_slice())
            .map(|(&cur, &tgt)| tau * cur + (F::one() - tau) * tgt)
            .collect();
        QFunction { values: Table::from_flat(self.n_states(), self.n_actions(), data).expect("same shape") }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularMdp<f64> {
        TabularMdp::new(
            2,
            1,
            vec![0.0, 1.0, 0.0, 1.0],
            Table::from_flat(2, 1, vec![0.0, 1.0]).unwrap(),
            0.9,
            vec![1.0, 0.0],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = TabularMdp::<f64>::new(1, 1, vec![0.5], Table::filled(1, 1, 0.0), 0.5, vec![1.0], 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_reward_above_bound() {
        let err = TabularMdp::<f64>::new(1, 1, vec![1.0], Table::filled(1, 1, 2.0), 0.5, vec![1.0], 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn json_round_trip_uses_nested_arrays() {
        let mdp = two_state();
        let text = serde_json::to_string(&mdp).unwrap();
        assert!(text.contains("\"transition\":[[[0.0,1.0]],[[0.0,1.0]]]"));
        let back: TabularMdp<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, mdp);
    }

    #[test]
    fn json_validation_runs_on_load() {
        let bad = r#"{"n_states":1,"n_actions":1,"gamma":0.5,"r_max":1.0,"rho0":[1.0],"reward":[[0.0]],"transition":[[[0.7]]]}"#;
        assert!(serde_json::from_str::<TabularMdp<f64>>(bad).is_err());
    }

    #[test]
    fn policy_rows_must_sum_to_one() {
        let t = Table::from_flat(1, 2, vec![0.6, 0.6]).unwrap();
        assert!(SoftPolicy::<f64>::new(t).is_err());
    }
}
