//! Seeded random instances for property sweeps.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};

use super::{QFunction, SoftPolicy, Table, TabularMdp};
use crate::data::{OfflineDataset, TransitionRecord};
use crate::scalar::Scalar;
use crate::seed::{rng_from_seed, sample_categorical, Rng};

/// Uniform draw from the probability simplex (normalized Exp(1) variates).
pub fn random_simplex<F: Scalar>(rng: &mut Rng, n: usize) -> Vec<F> {
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            e.max(1e-12)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    normalize(raw.iter().map(|x| x / total).collect())
}

/// Converts to `F` and renormalizes so the row sums to one in `F` arithmetic.
fn normalize<F: Scalar>(row: Vec<f64>) -> Vec<F> {
    let mut out: Vec<F> = row.into_iter().map(F::of).collect();
    let total: F = out.iter().copied().sum();
    for x in out.iter_mut() {
        *x /= total;
    }
    out
}

/// Random MDP: Dirichlet(1) transition rows and initial distribution,
/// rewards uniform on `[−r_max, r_max]`.
pub fn random_mdp<F: Scalar>(n_states: usize, n_actions: usize, gamma: f64, r_max: f64, seed: u64) -> TabularMdp<F> {
    let mut rng = rng_from_seed(seed);
    random_mdp_with(&mut rng, n_states, n_actions, gamma, r_max)
}

pub fn random_mdp_with<F: Scalar>(
    rng: &mut Rng,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_max: f64,
) -> TabularMdp<F> {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_simplex::<F>(rng, n_states));
    }
    let reward = Table::from_fn(n_states, n_actions, |_, _| F::of(rng.random_range(-r_max..=r_max)));
    let rho0 = random_simplex(rng, n_states);
    TabularMdp::new(n_states, n_actions, transition, reward, F::of(gamma), rho0, F::of(r_max))
        .expect("generator produces valid MDPs")
}

/// Strictly positive random policy.
pub fn random_policy<F: Scalar>(rng: &mut Rng, n_states: usize, n_actions: usize) -> SoftPolicy<F> {
    let mut data = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        data.extend(random_simplex::<F>(rng, n_actions));
    }
    SoftPolicy::new(Table::from_flat(n_states, n_actions, data).expect("shape")).expect("simplex rows")
}

/// Q table with entries uniform on `[−bound, bound]`.
pub fn random_q<F: Scalar>(rng: &mut Rng, n_states: usize, n_actions: usize, bound: f64) -> QFunction<F> {
    QFunction::new(Table::from_fn(n_states, n_actions, |_, _| F::of(rng.random_range(-bound..=bound)))).expect("finite")
}

/// `n_records` real transitions with `s` uniform over states, `a ∼ behavior(·|s)`,
/// `s' ∼ T(·|s,a)` and the table reward.
pub fn sample_dataset<F: Scalar>(
    mdp: &TabularMdp<F>,
    behavior: &SoftPolicy<F>,
    n_records: usize,
    seed: u64,
) -> OfflineDataset<usize> {
    let mut rng = rng_from_seed(seed);
    let records = (0..n_records)
        .map(|_| {
            let s = rng.random_range(0..mdp.n_states());
            let a = sample_categorical(behavior.row(s), &mut rng);
            let s2 = sample_categorical(mdp.next_row(s, a), &mut rng);
            TransitionRecord::real(s, a, mdp.reward().get(s, a).to_f64_lossy(), s2, false)
        })
        .collect();
    OfflineDataset::new(records).expect("finite table rewards")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_instance() {
        let a: TabularMdp<f64> = random_mdp(4, 3, 0.9, 1.0, 17);
        let b: TabularMdp<f64> = random_mdp(4, 3, 0.9, 1.0, 17);
        assert_eq!(a, b);
        let c: TabularMdp<f64> = random_mdp(4, 3, 0.9, 1.0, 18);
        assert_ne!(a, c);
    }

    #[test]
    fn f32_instances_validate() {
        let m: TabularMdp<f32> = random_mdp(6, 4, 0.9, 1.0, 3);
        assert_eq!(m.n_states(), 6);
    }
}
