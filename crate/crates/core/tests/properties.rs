use proptest::prelude::*;

use pspo_core::belief::{
    posterior_brute_force, posterior_objective, posterior_update, Belief, ConsistencyScore, NextValue,
};
use pspo_core::dynamics::{CategoricalModel, ModelEnsemble};
use pspo_core::engine::{
    closed_form_optimal_policy, constrained_improvement_step, contraction_check, regularized_state_objective,
    KlAggregation, MixtureKernel, TrustRegion,
};
use pspo_core::liquidation::normalized_score;
use pspo_core::mdp::random::{random_mdp, random_policy, random_q, random_simplex};
use pspo_core::mdp::{kl_divergence_rows, soft_value_row, TabularMdp};
use pspo_core::seed::rng_from_seed;

fn ensemble(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
    members: usize,
) -> ModelEnsemble<CategoricalModel<f64>> {
    let models = (0..members as u64)
        .map(|j| {
            let m: TabularMdp<f64> = random_mdp(n_states, n_actions, gamma, 1.0, seed.wrapping_mul(31).wrapping_add(j));
            CategoricalModel::from_mdp(&m)
        })
        .collect();
    ModelEnsemble::new(models, (0..members as u64).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn both_backups_contract_in_sup_norm(
        seed in any::<u64>(), ns in 1usize..=6, na in 1usize..=4, gamma in 0.0f64..0.99, alpha in 0.01f64..5.0,
    ) {
        let ens = ensemble(ns, na, gamma, seed, 3);
        let mut rng = rng_from_seed(seed);
        let belief = Belief::from_posterior(vec![1.0 / 3.0; 3], random_simplex(&mut rng, 3), 1.0).unwrap();
        let kernel = MixtureKernel::from_ensemble(&ens, &belief, gamma).unwrap();
        let pi = random_policy(&mut rng, ns, na);
        let mu = random_policy(&mut rng, ns, na);
        let q1 = random_q(&mut rng, ns, na, 20.0);
        let q2 = random_q(&mut rng, ns, na, 20.0);
        prop_assert!(contraction_check(&kernel, NextValue::Expected(&pi), &q1, &q2).unwrap().pass);
        let soft = NextValue::Soft { reference: &mu, alpha };
        prop_assert!(contraction_check(&kernel, soft, &q1, &q2).unwrap().pass);
    }

    #[test]
    fn soft_value_is_non_expansive(
        seed in any::<u64>(), na in 1usize..=6, alpha in 0.0f64..5.0,
    ) {
        let mut rng = rng_from_seed(seed);
        let mu: Vec<f64> = random_simplex(&mut rng, na);
        let q1 = random_q::<f64>(&mut rng, 1, na, 10.0);
        let q2 = random_q::<f64>(&mut rng, 1, na, 10.0);
        let (r1, r2) = (q1.table().row(0), q2.table().row(0));
        let gap = r1.iter().zip(r2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dv = (soft_value_row(r1, &mu, alpha) - soft_value_row(r2, &mu, alpha)).abs();
        prop_assert!(dv <= gap + 1e-12);
    }

    #[test]
    fn closed_form_policy_beats_random_rows(
        seed in any::<u64>(), na in 2usize..=5, alpha in 0.05f64..5.0,
    ) {
        let mut rng = rng_from_seed(seed);
        let q = random_q::<f64>(&mut rng, 1, na, 5.0);
        let mu = random_policy::<f64>(&mut rng, 1, na);
        let star = closed_form_optimal_policy(&q, &mu, alpha).unwrap();
        let best = regularized_state_objective(q.table().row(0), star.row(0), mu.row(0), alpha);
        // At the optimum the objective equals the soft value.
        prop_assert!((best - soft_value_row(q.table().row(0), mu.row(0), alpha)).abs() < 1e-9);
        for _ in 0..50 {
            let other: Vec<f64> = random_simplex(&mut rng, na);
            prop_assert!(regularized_state_objective(q.table().row(0), &other, mu.row(0), alpha) <= best + 1e-12);
        }
    }

    #[test]
    fn trust_region_step_stays_within_radius(
        seed in any::<u64>(), ns in 1usize..=5, na in 2usize..=4, alpha in 0.0f64..2.0, eps in 1e-4f64..0.5,
    ) {
        let mut rng = rng_from_seed(seed);
        let q = random_q::<f64>(&mut rng, ns, na, 10.0);
        let pi = random_policy(&mut rng, ns, na);
        let mu = random_policy(&mut rng, ns, na);
        let tr = TrustRegion { alpha, epsilon: eps, aggregation: KlAggregation::Max, weights: None };
        let step = constrained_improvement_step(&q, &pi, &mu, &tr).unwrap();
        prop_assert!(step.kl_max <= eps + 1e-6);
        for s in 0..ns {
            let kl = kl_divergence_rows(step.policy.row(s), pi.row(s)).unwrap();
            prop_assert!(kl <= eps + 1e-6);
            prop_assert!(step.policy.row(s).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn posterior_minimizes_its_objective(
        seed in any::<u64>(), n in 1usize..=3, beta in 0.1f64..10.0,
    ) {
        let mut rng = rng_from_seed(seed);
        let prior: Vec<f64> = random_simplex(&mut rng, n);
        let scores: Vec<f64> = random_simplex::<f64>(&mut rng, n).into_iter().map(|x| 3.0 * x).collect();
        let belief = Belief::new(prior.clone(), beta).unwrap();
        let score = ConsistencyScore::new(scores.clone()).unwrap();
        let post = posterior_update(&belief, &score).unwrap();
        let q = post.posterior();
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let grid = posterior_brute_force(&belief, &score, 1e-2).unwrap();
        let l1: f64 = q.iter().zip(&grid).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(l1 <= 2.0 * 1e-2 * n as f64);
        prop_assert!(posterior_objective(q, &prior, &scores, beta) <= posterior_objective(&grid, &prior, &scores, beta) + 1e-12);
    }

    #[test]
    fn lower_scores_never_lose_weight_under_a_uniform_prior(
        seed in any::<u64>(), n in 2usize..=8, beta in 0.0f64..10.0,
    ) {
        let mut rng = rng_from_seed(seed);
        let scores: Vec<f64> = random_simplex::<f64>(&mut rng, n);
        let post = posterior_update(&Belief::uniform(n, beta), &ConsistencyScore::new(scores.clone()).unwrap()).unwrap();
        for i in 0..n {
            for j in 0..n {
                if scores[i] < scores[j] {
                    prop_assert!(post.posterior()[i] >= post.posterior()[j]);
                }
            }
        }
    }

    #[test]
    fn normalized_score_is_strictly_increasing(a in -1e4f64..1e4, d in 1e-6f64..1e3) {
        let lo = normalized_score(a, "liquidation").unwrap();
        let hi = normalized_score(a + d, "liquidation").unwrap();
        prop_assert!(hi > lo);
    }
}
