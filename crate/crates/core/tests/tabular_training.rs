use pspo_core::belief::NextValue;
use pspo_core::dynamics::{CategoricalModel, ModelEnsemble};
use pspo_core::engine::{
    closed_form_optimal_policy, empirical_behavior_policy, fit_tabular_ensemble, train_tabular, EvaluationMode,
    MixtureKernel, PspoConfig, TabularProblem,
};
use pspo_core::mdp::random::{random_mdp, sample_dataset};
use pspo_core::mdp::{expected_return, SoftPolicy, TabularMdp};

fn instance(seed: u64) -> TabularMdp<f64> {
    random_mdp(4, 3, 0.9, 1.0, seed)
}

#[test]
fn single_true_model_reaches_soft_optimal_return() {
    let mdp = instance(11);
    let data = sample_dataset(&mdp, &SoftPolicy::uniform(4, 3), 20_000, 1);
    let mu = empirical_behavior_policy(&data, 4, 3, 1e-3).unwrap();
    let ensemble = ModelEnsemble::new(vec![CategoricalModel::from_mdp(&mdp)], vec![0]).unwrap();
    let config = PspoConfig {
        alpha: 0.1,
        ensemble_size: 1,
        model_pool_size: 1,
        polyak: 1.0,
        iterations: 400,
        batch_size: 64,
        rollout_starts: 8,
        ..Default::default()
    };
    let problem = TabularProblem {
        dataset: &data,
        ensemble: &ensemble,
        reference: &mu,
        rho0: mdp.rho0(),
        r_max: 1.0,
        true_mdp: Some(&mdp),
    };
    let out = train_tabular(&problem, &config, 3).unwrap();

    let kernel = MixtureKernel::from_mdp(&mdp);
    let soft = NextValue::Soft { reference: &mu, alpha: 0.1 };
    let (q_star, _) = kernel.fixed_point(&pspo_core::mdp::QFunction::zeros(4, 3), soft, 1e-12, 10_000).unwrap();
    let pi_star = closed_form_optimal_policy(&q_star, &mu, 0.1).unwrap();
    let j_star = expected_return(&mdp, &pi_star).unwrap();
    let j = expected_return(&mdp, &out.policy).unwrap();
    assert!((j - j_star).abs() <= 0.01 * j_star.abs(), "J = {j}, oracle = {j_star}");
    assert_eq!(out.reports.len(), 400);
    assert!(out.reports.iter().all(|r| r.is_well_formed() && r.within_trust_region(0.01)));
}

#[test]
fn zero_iterations_return_the_initial_policy() {
    let mdp = instance(2);
    let data = sample_dataset(&mdp, &SoftPolicy::uniform(4, 3), 2_000, 1);
    let mu = empirical_behavior_policy(&data, 4, 3, 1e-3).unwrap();
    let config = PspoConfig { iterations: 0, ensemble_size: 3, model_pool_size: 3, ..Default::default() };
    let ensemble = fit_tabular_ensemble::<f64>(&data, 4, 3, &config, 5).unwrap();
    let problem = TabularProblem {
        dataset: &data,
        ensemble: &ensemble,
        reference: &mu,
        rho0: mdp.rho0(),
        r_max: 1.0,
        true_mdp: None,
    };
    let out = train_tabular(&problem, &config, 0).unwrap();
    assert_eq!(out.policy, mu);
    assert!(out.reports.is_empty());
}

#[test]
fn same_seed_gives_identical_reports() {
    let mdp = instance(5);
    let data = sample_dataset(&mdp, &SoftPolicy::uniform(4, 3), 3_000, 2);
    let mu = empirical_behavior_policy(&data, 4, 3, 1e-3).unwrap();
    let config = PspoConfig {
        iterations: 20,
        ensemble_size: 4,
        model_pool_size: 6,
        evaluation: EvaluationMode::Stochastic,
        ..Default::default()
    };
    let ensemble = fit_tabular_ensemble::<f64>(&data, 4, 3, &config, 9).unwrap();
    let problem = TabularProblem {
        dataset: &data,
        ensemble: &ensemble,
        reference: &mu,
        rho0: mdp.rho0(),
        r_max: 1.0,
        true_mdp: Some(&mdp),
    };
    let a = train_tabular(&problem, &config, 17).unwrap();
    let b = train_tabular(&problem, &config, 17).unwrap();
    assert_eq!(a, b);
    let c = train_tabular(&problem, &config, 18).unwrap();
    assert_ne!(a.reports, c.reports);
}

#[test]
fn return_never_drops_when_improvement_condition_holds() {
    let mut holds = 0;
    let mut total = 0;
    let mut violations = 0;
    for seed in 0..10u64 {
        let mdp = random_mdp::<f64>(5, 3, 0.9, 1.0, 100 + seed);
        let behavior = pspo_core::mdp::random::random_policy(&mut pspo_core::seed::rng_from_seed(seed), 5, 3);
        let data = sample_dataset(&mdp, &behavior, 3_000, seed);
        let mu = empirical_behavior_policy(&data, 5, 3, 1e-3).unwrap();
        let config = PspoConfig {
            iterations: 50,
            ensemble_size: 5,
            model_pool_size: 5,
            evaluation: EvaluationMode::ExactRegularized,
            check_improvement: true,
            ..Default::default()
        };
        let ensemble = fit_tabular_ensemble::<f64>(&data, 5, 3, &config, seed).unwrap();
        let problem = TabularProblem {
            dataset: &data,
            ensemble: &ensemble,
            reference: &mu,
            rho0: mdp.rho0(),
            r_max: 1.0,
            true_mdp: Some(&mdp),
        };
        let out = train_tabular(&problem, &config, seed).unwrap();
        for r in &out.reports {
            total += 1;
            if r.condition_holds == Some(true) {
                holds += 1;
                if r.improved != Some(true) {
                    violations += 1;
                }
            }
        }
    }
    assert_eq!(violations, 0);
    assert!(holds > 0 && holds <= total);
}
