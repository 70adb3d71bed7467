//! Learned transition models, ensembles, and posterior-sampled rollouts.

pub mod categorical;
pub mod gaussian;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::data::TransitionRecord;
use crate::error::{PspoError, Result};
use crate::seed::{rng_from_seed, Rng};

pub use categorical::{fit_categorical, CategoricalModel};
pub use gaussian::{
    fit_gaussian, fit_gaussian_members, FeatureMap, GaussianFitConfig, GaussianFitReport, GaussianModel, StateBox,
};

/// A stochastic transition-and-reward model.
pub trait DynamicsModel: Send + Sync {
    type State: Clone + Send + Sync;

    /// Tag written into serialized ensembles.
    const KIND: &'static str;

    /// Draws `(next_state, reward)`.
    fn sample_next(&self, state: &Self::State, action: usize, rng: &mut Rng) -> (Self::State, f64);

    /// Predicted next-state mean in the model's coordinate system
    /// (a one-hot expectation, i.e. the probability row, for categorical models).
    fn predicted_mean(&self, state: &Self::State, action: usize) -> Vec<f64>;

    /// Exact next-state distribution, for models with a finite state space.
    fn next_distribution(&self, _state: &Self::State, _action: usize) -> Option<Vec<f64>> {
        None
    }
}

/// `sample_next` with a dedicated seeded generator.
pub fn sample_next_seeded<M: DynamicsModel>(model: &M, state: &M::State, action: usize, seed: u64) -> (M::State, f64) {
    model.sample_next(state, action, &mut rng_from_seed(seed))
}

/// An active ensemble of `N` members drawn from a pool of `M ≥ N` models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEnsemble<M> {
    pool: Vec<M>,
    active: Vec<usize>,
    seeds: Vec<u64>,
}

impl<M> ModelEnsemble<M> {
    /// Ensemble whose pool is exactly its members.
    pub fn new(members: Vec<M>, seeds: Vec<u64>) -> Result<Self> {
        let active = (0..members.len()).collect();
        Self::with_pool(members, active, seeds)
    }

    /// `seeds[j]` is the training seed of pool entry `j`.
    pub fn with_pool(pool: Vec<M>, active: Vec<usize>, seeds: Vec<u64>) -> Result<Self> {
        if active.is_empty() {
            return Err(PspoError::InvalidInput("ensemble needs at least one member".into()));
        }
        if seeds.len() != pool.len() {
            return Err(PspoError::DimensionMismatch("one seed per pool model".into()));
        }
        let mut seen = vec![false; pool.len()];
        for &i in &active {
            if i >= pool.len() || seen[i] {
                return Err(PspoError::InvalidInput("active members must be distinct pool indices".into()));
            }
            seen[i] = true;
        }
        Ok(Self { pool, active, seeds })
    }

    /// Draws `n` distinct members from `pool` uniformly at random.
    pub fn subsample(pool: Vec<M>, seeds: Vec<u64>, n: usize, rng: &mut Rng) -> Result<Self> {
        if n == 0 || n > pool.len() {
            return Err(PspoError::InvalidInput(format!("cannot draw {n} members from a pool of {}", pool.len())));
        }
        let mut active = index::sample(rng, pool.len(), n).into_vec();
        active.sort_unstable();
        Self::with_pool(pool, active, seeds)
    }

    /// Number of active members `N`.
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    /// Active member `i` (`0 ≤ i < N`).
    pub fn member(&self, i: usize) -> &M {
        &self.pool[self.active[i]]
    }

    pub fn members(&self) -> impl Iterator<Item = &M> {
        self.active.iter().map(|&i| &self.pool[i])
    }

    pub fn active_indices(&self) -> &[usize] {
        &self.active
    }

    pub fn pool(&self) -> &[M] {
        &self.pool
    }

    /// Training seeds of the active members.
    pub fn member_seeds(&self) -> Vec<u64> {
        self.active.iter().map(|&i| self.seeds[i]).collect()
    }

    pub fn pool_seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub(crate) fn check_belief(&self, belief: &Belief) -> Result<()> {
        if belief.len() != self.len() {
            return Err(PspoError::DimensionMismatch(format!(
                "belief over {} models, ensemble has {}",
                belief.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Synthetic transition annotated with the ensemble member that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedRecord<S> {
    pub rollout: usize,
    pub member: usize,
    pub record: TransitionRecord<S>,
}

/// Model rollouts: one posterior draw per start state, held fixed for the
/// whole rollout. Rollout `i` uses seed `seed + i`; rollouts run in parallel
/// and are concatenated in start-state order.
pub fn generate_synthetic_traced<M, P, D>(
    ensemble: &ModelEnsemble<M>,
    belief: &Belief,
    policy: P,
    is_done: D,
    start_states: &[M::State],
    horizon: usize,
    seed: u64,
) -> Result<Vec<TracedRecord<M::State>>>
where
    M: DynamicsModel,
    P: Fn(&M::State, &mut Rng) -> usize + Sync,
    D: Fn(&M::State, usize, &M::State) -> bool + Sync,
{
    ensemble.check_belief(belief)?;
    if horizon == 0 {
        return Err(PspoError::InvalidInput("rollout horizon must be at least 1".into()));
    }
    let rollouts: Vec<Vec<TracedRecord<M::State>>> = start_states
        .par_iter()
        .enumerate()
        .map(|(i, s0)| {
            let mut rng = rng_from_seed(seed.wrapping_add(i as u64));
            let member = belief.sample_model(&mut rng);
            let model = ensemble.member(member);
            let mut out = Vec::with_capacity(horizon);
            let mut s = s0.clone();
            for _ in 0..horizon {
                let a = policy(&s, &mut rng);
                let (s2, r) = model.sample_next(&s, a, &mut rng);
                let done = is_done(&s, a, &s2);
                out.push(TracedRecord {
                    rollout: i,
                    member,
                    record: TransitionRecord::synthetic(s.clone(), a, r, s2.clone(), done),
                });
                if done {
                    break;
                }
                s = s2;
            }
            out
        })
        .collect();
    Ok(rollouts.into_iter().flatten().collect())
}

/// [`generate_synthetic_traced`] without the member annotations.
pub fn generate_synthetic<M, P, D>(
    ensemble: &ModelEnsemble<M>,
    belief: &Belief,
    policy: P,
    is_done: D,
    start_states: &[M::State],
    horizon: usize,
    seed: u64,
) -> Result<Vec<TransitionRecord<M::State>>>
where
    M: DynamicsModel,
    P: Fn(&M::State, &mut Rng) -> usize + Sync,
    D: Fn(&M::State, usize, &M::State) -> bool + Sync,
{
    Ok(generate_synthetic_traced(ensemble, belief, policy, is_done, start_states, horizon, seed)?
        .into_iter()
        .map(|t| t.record)
        .collect())
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::data::Provenance;

    /// Deterministic walk `s → s + step` that counts its calls.
    struct Counting {
        step: i64,
        calls: AtomicUsize,
    }

    impl Counting {
        fn new(step: i64) -> Self {
            Self { step, calls: AtomicUsize::new(0) }
        }
    }

    impl DynamicsModel for Counting {
        type State = i64;
        const KIND: &'static str = "counting";

        fn sample_next(&self, s: &i64, _a: usize, _rng: &mut Rng) -> (i64, f64) {
            self.calls.fetch_add(1, Ordering::Relaxed);
            (s + self.step, self.step as f64)
        }

        fn predicted_mean(&self, s: &i64, _a: usize) -> Vec<f64> {
            vec![(s + self.step) as f64]
        }
    }

    fn two_member() -> ModelEnsemble<Counting> {
        ModelEnsemble::new(vec![Counting::new(1), Counting::new(-1)], vec![0, 1]).unwrap()
    }

    #[test]
    fn point_mass_posterior_uses_only_that_member() {
        let ens = two_member();
        let belief = Belief::from_posterior(vec![0.5, 0.5], vec![1.0, 0.0], 1.0).unwrap();
        let starts: Vec<i64> = (0..40).collect();
        let recs = generate_synthetic(&ens, &belief, |_, _| 0, |_, _, _| false, &starts, 5, 9).unwrap();
        assert_eq!(recs.len(), 200);
        assert_eq!(ens.member(0).calls.load(Ordering::Relaxed), 200);
        assert_eq!(ens.member(1).calls.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn each_rollout_sticks_to_one_member() {
        let ens = two_member();
        let belief = Belief::uniform(2, 1.0);
        let starts = vec![0i64; 64];
        let traced = generate_synthetic_traced(&ens, &belief, |_, _| 0, |_, _, _| false, &starts, 6, 3).unwrap();
        let mut used = [false, false];
        for (i, chunk) in traced.chunks(6).enumerate() {
            assert!(chunk.iter().all(|t| t.rollout == i && t.member == chunk[0].member));
            // The trajectory itself must be that member's walk.
            let step = if chunk[0].member == 0 { 1 } else { -1 };
            for (k, t) in chunk.iter().enumerate() {
                assert_eq!(t.record.s2, step * (k as i64 + 1));
            }
            used[chunk[0].member] = true;
        }
        assert!(used[0] && used[1]);
    }

    #[test]
    fn horizon_one_bookkeeping() {
        let ens = two_member();
        let starts: Vec<i64> = (0..100).collect();
        let recs =
            generate_synthetic(&ens, &Belief::uniform(2, 1.0), |_, _| 0, |_, _, _| false, &starts, 1, 0).unwrap();
        assert_eq!(recs.len(), 100);
        assert!(recs.iter().all(|r| r.provenance == Provenance::Synthetic));
    }

    #[test]
    fn rollouts_stop_at_done() {
        let ens = two_member();
        let belief = Belief::from_posterior(vec![0.5, 0.5], vec![1.0, 0.0], 1.0).unwrap();
        let recs = generate_synthetic(&ens, &belief, |_, _| 0, |_, _, s2| *s2 >= 3, &[0, 1, 10], 5, 0).unwrap();
        // 0→1→2→3 (3 records), 1→2→3 (2 records), 10→11 (1 record)
        assert_eq!(recs.len(), 6);
        assert!(recs.iter().filter(|r| r.done).count() == 3);
    }

    #[test]
    fn same_seed_same_rollouts() {
        let ens = two_member();
        let belief = Belief::uniform(2, 1.0);
        let starts = vec![0i64; 30];
        let run = |seed| generate_synthetic(&ens, &belief, |_, _| 0, |_, _, _| false, &starts, 3, seed).unwrap();
        assert_eq!(run(4), run(4));
    }

    #[test]
    fn pool_subsampling() {
        let pool: Vec<Counting> = (0..10).map(Counting::new).collect();
        let seeds = (0..10).collect();
        let ens = ModelEnsemble::subsample(pool, seeds, 4, &mut rng_from_seed(1)).unwrap();
        assert_eq!(ens.len(), 4);
        assert_eq!(ens.pool_size(), 10);
        let mut idx = ens.active_indices().to_vec();
        idx.dedup();
        assert_eq!(idx.len(), 4);
        assert!(ModelEnsemble::<Counting>::with_pool(vec![], vec![], vec![]).is_err());
    }
}
