//! Posterior-averaged Bellman operators on tabular Q-functions.
//!
//! Averaging a backup over models drawn from the posterior equals a single
//! backup under the belief-weighted mixture kernel `Σ_i w_i T_i` (with the
//! mixture reward `Σ_i w_i r̂_i`), so both operators are applied exactly
//! through [`MixtureKernel`].

use crate::belief::{Belief, NextValue};
use crate::dynamics::{CategoricalModel, ModelEnsemble};
use crate::error::{PspoError, Result};
use crate::mdp::{QFunction, SoftPolicy, Table, TabularMdp};
use crate::scalar::Scalar;

/// Transition kernel, reward table, and discount without an initial
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureKernel<F> {
    n_states: usize,
    n_actions: usize,
    transition: Vec<F>,
    reward: Table<F>,
    gamma: F,
}

impl<F: Scalar> MixtureKernel<F> {
    pub fn from_ensemble(ensemble: &ModelEnsemble<CategoricalModel<F>>, belief: &Belief, gamma: F) -> Result<Self> {
        if belief.len() != ensemble.len() {
            return Err(PspoError::DimensionMismatch("belief vs ensemble".into()));
        }
        let first = ensemble.member(0);
        let (ns, na) = (first.n_states(), first.n_actions());
        let mut transition = vec![F::zero(); ns * na * ns];
        let mut reward = Table::filled(ns, na, F::zero());
        for (&w, model) in belief.posterior().iter().zip(ensemble.members()) {
            if model.n_states() != ns || model.n_actions() != na {
                return Err(PspoError::DimensionMismatch("ensemble members differ in shape".into()));
            }
            if w == 0.0 {
                continue;
            }
            let w = F::of(w);
            for (acc, &p) in transition.iter_mut().zip(model.transition()) {
                *acc += w * p;
            }
            for (acc, &r) in reward.as_mut_slice().iter_mut().zip(model.reward_table().as_slice()) {
                *acc += w * r;
            }
        }
        // Renormalize rows so the mixture is a simplex in `F` arithmetic.
        for row in transition.chunks_mut(ns) {
            let total: F = row.iter().copied().sum();
            for p in row.iter_mut() {
                *p /= total;
            }
        }
        Ok(Self { n_states: ns, n_actions: na, transition, reward, gamma })
    }

    pub fn from_mdp(mdp: &TabularMdp<F>) -> Self {
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            transition: mdp.transition().to_vec(),
            reward: mdp.reward().clone(),
            gamma: mdp.gamma(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> F {
        self.gamma
    }

    pub fn reward(&self) -> &Table<F> {
        &self.reward
    }

    pub fn next_row(&self, s: usize, a: usize) -> &[F] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// The mixture as a full MDP (for exact returns under the belief).
    pub fn to_mdp(&self, rho0: Vec<F>, r_max: F) -> Result<TabularMdp<F>> {
        TabularMdp::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            self.gamma,
            rho0,
            r_max,
        )
    }

    fn check_q(&self, q: &QFunction<F>) -> Result<()> {
        if q.n_states() != self.n_states || q.n_actions() != self.n_actions {
            return Err(PspoError::DimensionMismatch("Q vs kernel".into()));
        }
        Ok(())
    }

    /// `(B Q)(s,a) = r(s,a) + γ Σ_{s'} T(s'|s,a) V(s')` with `V` formed from
    /// `q` by `next_value`.
    pub fn backup(&self, q: &QFunction<F>, next_value: NextValue<'_, F>) -> Result<QFunction<F>> {
        self.check_q(q)?;
        let v = next_value.state_values(q);
        Ok(self.backup_with_values(&v))
    }

    pub(crate) fn backup_with_values(&self, v: &[F]) -> QFunction<F> {
        let table = Table::from_fn(self.n_states, self.n_actions, |s, a| {
            let ev: F = self.next_row(s, a).iter().zip(v).map(|(&t, &x)| t * x).sum();
            self.reward.get(s, a) + self.gamma * ev
        });
        QFunction::new(table).expect("finite backup of finite values")
    }

    /// Repeated backups from `q0` until successive iterates differ by at
    /// most `tol` in max norm. Returns the last iterate and the sweep count.
    pub fn fixed_point(
        &self,
        q0: &QFunction<F>,
        next_value: NextValue<'_, F>,
        tol: F,
        max_sweeps: usize,
    ) -> Result<(QFunction<F>, usize)> {
        let mut q = q0.clone();
        for sweep in 1..=max_sweeps {
            let next = self.backup(&q, next_value)?;
            let diff = next.max_norm_diff(&q);
            q = next;
            if diff <= tol {
                return Ok((q, sweep));
            }
        }
        Ok((q, max_sweeps))
    }
}

/// Posterior-sampling evaluation operator: `r + γ E_{T∼P, s'∼T, a'∼π}[Q(s',a')]`.
pub fn posterior_eval_operator<F: Scalar>(
    q: &QFunction<F>,
    policy: &SoftPolicy<F>,
    ensemble: &ModelEnsemble<CategoricalModel<F>>,
    belief: &Belief,
    gamma: F,
) -> Result<QFunction<F>> {
    MixtureKernel::from_ensemble(ensemble, belief, gamma)?.backup(q, NextValue::Expected(policy))
}

/// Posterior-sampling soft optimality operator:
/// `r + γ E_{T∼P, s'∼T}[α log E_μ exp(Q(s',·)/α)]`.
pub fn posterior_opt_operator<F: Scalar>(
    q: &QFunction<F>,
    reference: &SoftPolicy<F>,
    ensemble: &ModelEnsemble<CategoricalModel<F>>,
    belief: &Belief,
    alpha: F,
    gamma: F,
) -> Result<QFunction<F>> {
    if !(alpha > F::zero()) {
        return Err(PspoError::InvalidInput("alpha must be positive".into()));
    }
    MixtureKernel::from_ensemble(ensemble, belief, gamma)?.backup(q, NextValue::Soft { reference, alpha })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `‖B Q1 − B Q2‖_∞ ≤ γ ‖Q1 − Q2‖_∞ + 1e-10`.
pub fn contraction_check<F: Scalar>(
    kernel: &MixtureKernel<F>,
    next_value: NextValue<'_, F>,
    q1: &QFunction<F>,
    q2: &QFunction<F>,
) -> Result<ContractionCheck> {
    let b1 = kernel.backup(q1, next_value)?;
    let b2 = kernel.backup(q2, next_value)?;
    let lhs = b1.max_norm_diff(&b2).to_f64_lossy();
    let rhs = kernel.gamma().to_f64_lossy() * q1.max_norm_diff(q2).to_f64_lossy();
    Ok(ContractionCheck { lhs, rhs, pass: lhs <= rhs + 1e-10 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::exact_policy_eval;
    use crate::mdp::random::{random_mdp, random_policy, random_q};
    use crate::seed::rng_from_seed;

    fn two_model(seed: u64) -> (ModelEnsemble<CategoricalModel<f64>>, Belief) {
        let a: TabularMdp<f64> = random_mdp(4, 2, 0.9, 1.0, seed);
        let b: TabularMdp<f64> = random_mdp(4, 2, 0.9, 1.0, seed + 100);
        let ens = ModelEnsemble::new(vec![CategoricalModel::from_mdp(&a), CategoricalModel::from_mdp(&b)], vec![0, 1])
            .unwrap();
        (ens, Belief::from_posterior(vec![0.5, 0.5], vec![0.3, 0.7], 1.0).unwrap())
    }

    #[test]
    fn zero_q_gives_reward() {
        let (ens, belief) = two_model(1);
        let pi = SoftPolicy::uniform(4, 2);
        let out = posterior_eval_operator(&QFunction::zeros(4, 2), &pi, &ens, &belief, 0.9).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                let r = 0.3 * ens.member(0).reward(s, a) + 0.7 * ens.member(1).reward(s, a);
                assert!((out.get(s, a) - r).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_true_model_is_classical_backup() {
        let mdp: TabularMdp<f64> = random_mdp(4, 3, 0.9, 1.0, 2);
        let ens = ModelEnsemble::new(vec![CategoricalModel::from_mdp(&mdp)], vec![0]).unwrap();
        let belief = Belief::uniform(1, 1.0);
        let mut rng = rng_from_seed(3);
        let pi = random_policy(&mut rng, 4, 3);
        let q = random_q(&mut rng, 4, 3, 5.0);
        let out = posterior_eval_operator(&q, &pi, &ens, &belief, 0.9).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                let mut expect = mdp.reward().get(s, a);
                for s2 in 0..4 {
                    let v: f64 = (0..3).map(|b| pi.prob(s2, b) * q.get(s2, b)).sum();
                    expect += 0.9 * mdp.next_row(s, a)[s2] * v;
                }
                assert!((out.get(s, a) - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn iterated_eval_operator_reaches_mixture_policy_value() {
        let (ens, belief) = two_model(4);
        let pi = SoftPolicy::uniform(4, 2);
        let kernel = MixtureKernel::from_ensemble(&ens, &belief, 0.9).unwrap();
        let mut q = QFunction::zeros(4, 2);
        for _ in 0..500 {
            q = kernel.backup(&q, NextValue::Expected(&pi)).unwrap();
        }
        let mdp = kernel.to_mdp(vec![0.25; 4], 1.0).unwrap();
        let exact = exact_policy_eval(&mdp, &pi).unwrap();
        assert!(q.max_norm_diff(&exact) < 1e-8);
    }

    #[test]
    fn soft_operator_on_unit_reward() {
        let base: TabularMdp<f64> = random_mdp(3, 2, 0.5, 1.0, 8);
        let mdp = base.with_reward(Table::filled(3, 2, 1.0)).unwrap();
        let ens = ModelEnsemble::new(vec![CategoricalModel::from_mdp(&mdp)], vec![0]).unwrap();
        let mu = random_policy(&mut rng_from_seed(1), 3, 2);
        let out =
            posterior_opt_operator(&QFunction::zeros(3, 2), &mu, &ens, &Belief::uniform(1, 1.0), 0.7, 0.5).unwrap();
        assert!(out.table().as_slice().iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn soft_fixed_point_from_two_starts() {
        let mdp: TabularMdp<f64> = random_mdp(3, 2, 0.9, 1.0, 5);
        let kernel = MixtureKernel::from_mdp(&mdp);
        let mu = SoftPolicy::uniform(3, 2);
        let nv = NextValue::Soft { reference: &mu, alpha: 0.5 };
        let (lo, _) = kernel.fixed_point(&QFunction::zeros(3, 2), nv, 1e-13, 10_000).unwrap();
        let (hi, _) = kernel.fixed_point(&QFunction::constant(3, 2, 10.0), nv, 1e-13, 10_000).unwrap();
        assert!(lo.max_norm_diff(&hi) < 1e-8);
        let again = kernel.backup(&lo, nv).unwrap();
        assert!(again.max_norm_diff(&lo) < 1e-10);
    }

    #[test]
    fn constant_shift_propagates_by_gamma() {
        let mdp: TabularMdp<f64> = random_mdp(5, 3, 0.8, 1.0, 6);
        let kernel = MixtureKernel::from_mdp(&mdp);
        let mut rng = rng_from_seed(7);
        let pi = random_policy(&mut rng, 5, 3);
        let q = random_q(&mut rng, 5, 3, 3.0);
        let shifted = q.shifted(2.5);
        for nv in [NextValue::Expected(&pi), NextValue::Soft { reference: &pi, alpha: 0.3 }] {
            let c = contraction_check(&kernel, nv, &q, &shifted).unwrap();
            assert!((c.lhs - 0.8 * 2.5).abs() < 1e-12);
            assert!(c.pass);
            let same = contraction_check(&kernel, nv, &q, &q).unwrap();
            assert_eq!(same.lhs, 0.0);
        }
    }
}
