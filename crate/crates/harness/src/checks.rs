//! Self-generating property suites. Failures are reported in the results,
//! never thrown; only setup problems (unknown suite, unreadable artifacts)
//! are errors.

use std::collections::BTreeMap;

use pspo_core::belief::{posterior_brute_force, posterior_update, Belief, ConsistencyScore, NextValue};
use pspo_core::dynamics::{CategoricalModel, ModelEnsemble};
use pspo_core::engine::{
    closed_form_optimal_policy, contraction_check, empirical_behavior_policy, fit_tabular_ensemble,
    regularized_state_objective, stochastic_q_update, train_tabular, variance_bound_check, ContinuousOutcome,
    EvaluationMode, IterationReport, LinearQ, LinearSoftPolicy, MixtureKernel, PspoConfig, Query, Schedule,
    TabularProblem,
};
use pspo_core::liquidation::{ou_step, ou_transition, uncertainty_diagnostic, LiquidationRun, OuParams, FEATURE_DIM};
use pspo_core::mdp::random::{random_mdp_with, random_policy, random_q, random_simplex, sample_dataset};
use pspo_core::mdp::soft_value_row;
use pspo_core::seed::{derive_seed, rng_from_seed};
use pspo_core::stats;
use pspo_core::{QFunction, SoftPolicy, Table, TabularMdp};
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Track};
use crate::error::{HarnessError, Result};
use crate::format::{read_json, sig9, write_csv, write_json};
use crate::pipeline::{finish_phase, policy_file, read_dataset, PolicyArtifact, DATASET, ENSEMBLE};

pub const SUITES: [&str; 10] = [
    "contraction",
    "nonexpansion",
    "variance",
    "robbins_monro",
    "posterior",
    "closed_form",
    "monotonic",
    "trust_region",
    "ou",
    "correlation",
];

pub const CHECKS_FILE: &str = "checks.json";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.csv";

/// Outcome of one property. `pass` is `None` for informational results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub suite: String,
    pub property: String,
    pub pass: Option<bool>,
    pub stats: BTreeMap<String, f64>,
    pub note: String,
}

impl CheckResult {
    fn new(suite: &str, property: &str, pass: Option<bool>, stats: &[(&str, f64)]) -> Self {
        Self {
            suite: suite.into(),
            property: property.into(),
            pass,
            stats: stats.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            note: String::new(),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    /// `suite/property: PASS|FAIL|INFO key=value ...`.
    pub fn line(&self) -> String {
        let status = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        let mut line = format!("{}/{}: {status}", self.suite, self.property);
        for (k, v) in &self.stats {
            line.push_str(&format!(" {k}={}", sig9(*v)));
        }
        if !self.note.is_empty() {
            line.push_str(&format!(" ({})", self.note));
        }
        line
    }
}

/// Resolves a suite selection; empty means every suite.
pub fn select_suites(names: &[String]) -> Result<Vec<&'static str>> {
    if names.is_empty() {
        return Ok(SUITES.to_vec());
    }
    names
        .iter()
        .flat_map(|n| n.split(','))
        .map(|n| {
            let n = n.trim();
            SUITES
                .iter()
                .find(|s| **s == n)
                .copied()
                .ok_or_else(|| HarnessError::Usage(format!("unknown suite `{n}`; available: {}", SUITES.join(", "))))
        })
        .collect()
}

/// Runs the selected suites and writes `checks.json` to the run directory.
pub fn run_checks(config: &ExperimentConfig, suites: &[&str]) -> Result<Vec<CheckResult>> {
    let start = std::time::Instant::now();
    let mut ctx = Ctx { config, exact: None, stochastic: None };
    let mut results = Vec::new();
    for &suite in suites {
        results.extend(match suite {
            "contraction" => contraction(config),
            "nonexpansion" => nonexpansion(config),
            "variance" => ctx.variance(),
            "robbins_monro" => robbins_monro(config),
            "posterior" => posterior(config),
            "closed_form" => closed_form(config),
            "monotonic" => ctx.monotonic(),
            "trust_region" => ctx.trust_region(),
            "ou" => ou(config),
            "correlation" => correlation(config)?,
            other => return Err(HarnessError::Usage(format!("unknown suite `{other}`"))),
        });
    }
    write_json(&config.out.join(CHECKS_FILE), &results)?;
    let mut files = vec![CHECKS_FILE.to_string()];
    if config.out.join(DIAGNOSTIC_FILE).exists() && suites.contains(&"correlation") {
        files.push(DIAGNOSTIC_FILE.to_string());
    }
    let mut manifest = finish_phase(config, "check", &files, start)?;
    for r in &results {
        if let Some(pass) = r.pass {
            manifest.checks.insert(format!("{}/{}", r.suite, r.property), pass);
        }
    }
    manifest.save(&config.out)?;
    Ok(results)
}

fn check_seed(config: &ExperimentConfig, suite: &str, i: u64) -> u64 {
    derive_seed(config.seed, &format!("check_{suite}"), i)
}

/// A random ensemble of 1–3 models over a random shape (≤ 6 states,
/// ≤ 4 actions) with a random posterior.
fn random_instance(seed: u64, gamma: f64) -> (ModelEnsemble<CategoricalModel<f64>>, Belief) {
    let mut rng = rng_from_seed(seed);
    let ns = rng.random_range(2..=6);
    let na = rng.random_range(2..=4);
    let n = rng.random_range(1..=3);
    let members: Vec<CategoricalModel<f64>> =
        (0..n).map(|_| CategoricalModel::from_mdp(&random_mdp_with::<f64>(&mut rng, ns, na, gamma, 1.0))).collect();
    let posterior = random_simplex(&mut rng, n);
    let belief = Belief::from_posterior(vec![1.0 / n as f64; n], posterior, 1.0).expect("simplex posterior");
    (ModelEnsemble::new(members, (0..n as u64).collect()).expect("same shapes"), belief)
}

fn contraction(config: &ExperimentConfig) -> Vec<CheckResult> {
    let gamma = config.pspo.gamma;
    let alpha = config.pspo.alpha.max(1e-3);
    let bound = 1.0 / (1.0 - gamma).max(1e-3);
    let per_instance: Vec<[(f64, f64, usize); 2]> = (0..config.checks.instances as u64)
        .into_par_iter()
        .map(|i| {
            let seed = check_seed(config, "contraction", i);
            let (ens, belief) = random_instance(seed, gamma);
            let kernel = MixtureKernel::from_ensemble(&ens, &belief, gamma).expect("valid belief");
            let (ns, na) = (kernel.n_states(), kernel.n_actions());
            let mut rng = rng_from_seed(derive_seed(seed, "pairs", 0));
            let pi = random_policy(&mut rng, ns, na);
            let mu = random_policy(&mut rng, ns, na);
            let ops = [NextValue::Expected(&pi), NextValue::Soft { reference: &mu, alpha }];
            ops.map(|op| {
                let mut worst = (f64::NEG_INFINITY, 0.0f64, 0);
                for _ in 0..1000 {
                    let q1 = random_q(&mut rng, ns, na, bound);
                    let q2 = random_q(&mut rng, ns, na, bound);
                    let c = contraction_check(&kernel, op, &q1, &q2).expect("shapes agree");
                    worst.0 = worst.0.max(c.lhs - c.rhs);
                    worst.1 = worst.1.max(c.lhs);
                    worst.2 += usize::from(!c.pass);
                }
                worst
            })
        })
        .collect();
    ["evaluation_operator", "optimality_operator"]
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let excess = per_instance.iter().map(|r| r[k].0).fold(f64::NEG_INFINITY, f64::max);
            let max_lhs = per_instance.iter().map(|r| r[k].1).fold(0.0, f64::max);
            let failures: usize = per_instance.iter().map(|r| r[k].2).sum();
            CheckResult::new(
                "contraction",
                name,
                Some(failures == 0),
                &[
                    ("instances", per_instance.len() as f64),
                    ("pairs", 1000.0 * per_instance.len() as f64),
                    ("gamma", gamma),
                    ("max_excess", excess),
                    ("max_lhs", max_lhs),
                    ("failures", failures as f64),
                ],
            )
        })
        .collect()
}

fn nonexpansion(config: &ExperimentConfig) -> Vec<CheckResult> {
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0usize;
    let mut rows = 0usize;
    for i in 0..config.checks.instances as u64 {
        let mut rng = rng_from_seed(check_seed(config, "nonexpansion", i));
        let na = rng.random_range(2..=6);
        let alpha = rng.random_range(0.05..5.0);
        for _ in 0..1000 {
            let mu: Vec<f64> = random_simplex(&mut rng, na);
            let q1: Vec<f64> = (0..na).map(|_| rng.random_range(-10.0..10.0)).collect();
            let q2: Vec<f64> = (0..na).map(|_| rng.random_range(-10.0..10.0)).collect();
            let lhs = (soft_value_row(&q1, &mu, alpha) - soft_value_row(&q2, &mu, alpha)).abs();
            let rhs = q1.iter().zip(&q2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(lhs - rhs);
            failures += usize::from(lhs > rhs + 1e-12);
            rows += 1;
        }
    }
    vec![CheckResult::new(
        "nonexpansion",
        "soft_value",
        Some(failures == 0),
        &[("rows", rows as f64), ("max_excess", worst), ("failures", failures as f64)],
    )]
}

/// Training runs shared by the variance, monotonic and trust-region suites.
struct Ctx<'a> {
    config: &'a ExperimentConfig,
    exact: Option<Vec<Vec<IterationReport>>>,
    stochastic: Option<Vec<Vec<IterationReport>>>,
}

const TABULAR_RUNS: u64 = 10;
const TABULAR_ITERATIONS: usize = 50;

/// One tabular PSPO run with `r_max = 1`, `γ = 0.9` on a random
/// 5-state, 3-action instance with a random behavior policy.
fn tabular_reports(seed: u64, evaluation: EvaluationMode) -> Vec<IterationReport> {
    let mdp: TabularMdp = random_mdp_with(&mut rng_from_seed(derive_seed(seed, "mdp", 0)), 5, 3, 0.9, 1.0);
    let behavior = random_policy(&mut rng_from_seed(derive_seed(seed, "behavior", 0)), 5, 3);
    let data = sample_dataset(&mdp, &behavior, 3_000, derive_seed(seed, "dataset", 0));
    let mu = empirical_behavior_policy(&data, 5, 3, 1e-3).expect("in-range records");
    let config = PspoConfig {
        gamma: 0.9,
        iterations: TABULAR_ITERATIONS,
        ensemble_size: 5,
        model_pool_size: 5,
        evaluation,
        check_improvement: evaluation == EvaluationMode::ExactRegularized,
        ..Default::default()
    };
    let ensemble =
        fit_tabular_ensemble::<f64>(&data, 5, 3, &config, derive_seed(seed, "ensemble", 0)).expect("non-empty dataset");
    let problem = TabularProblem {
        dataset: &data,
        ensemble: &ensemble,
        reference: &mu,
        rho0: mdp.rho0(),
        r_max: 1.0,
        true_mdp: Some(&mdp),
    };
    train_tabular(&problem, &config, derive_seed(seed, "pspo", 0)).expect("valid tabular run").reports
}

impl Ctx<'_> {
    fn runs(&mut self, evaluation: EvaluationMode) -> &[Vec<IterationReport>] {
        let config = self.config;
        let slot = if evaluation == EvaluationMode::ExactRegularized { &mut self.exact } else { &mut self.stochastic };
        slot.get_or_insert_with(|| {
            (0..TABULAR_RUNS)
                .into_par_iter()
                .map(|k| tabular_reports(check_seed(config, &format!("tabular_{evaluation:?}"), k), evaluation))
                .collect()
        })
    }

    fn variance(&mut self) -> Vec<CheckResult> {
        let reports: Vec<&IterationReport> = self.runs(EvaluationMode::Stochastic).iter().flatten().collect();
        let violations = reports.iter().filter(|r| !r.variance_within_bound()).count();
        let max_ratio = reports.iter().map(|r| r.target_variance / r.variance_bound).fold(0.0, f64::max);
        let bound = reports.first().map_or(f64::NAN, |r| r.variance_bound);
        let recorded = CheckResult::new(
            "variance",
            "recorded_targets",
            Some(violations == 0 && !reports.is_empty()),
            &[
                ("iterations", reports.len() as f64),
                ("bound", bound),
                ("max_ratio", max_ratio),
                ("violations", violations as f64),
            ],
        );
        // Two-point targets at ±r_max/(1−γ) attain the bound.
        let extremal: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 10.0 } else { -10.0 }).collect();
        let c = variance_bound_check(&extremal, 1.0, 0.9).expect("two or more samples");
        let ratio = c.empirical_variance / c.bound;
        let tight = CheckResult::new(
            "variance",
            "extremal_tightness",
            Some(c.pass && ratio >= 0.95),
            &[("bound", c.bound), ("variance", c.empirical_variance), ("ratio", ratio)],
        );
        vec![recorded, tight]
    }

    fn monotonic(&mut self) -> Vec<CheckResult> {
        let reports: Vec<&IterationReport> = self.runs(EvaluationMode::ExactRegularized).iter().flatten().collect();
        let holds: Vec<&&IterationReport> = reports.iter().filter(|r| r.condition_holds == Some(true)).collect();
        let violations = holds.iter().filter(|r| r.improved != Some(true)).count();
        let improved_anyway = reports.iter().filter(|r| r.improved == Some(true)).count();
        vec![
            CheckResult::new(
                "monotonic",
                "improvement_when_condition_holds",
                Some(violations == 0 && !holds.is_empty()),
                &[
                    ("runs", TABULAR_RUNS as f64),
                    ("iterations", reports.len() as f64),
                    ("condition_holds", holds.len() as f64),
                    ("violations", violations as f64),
                ],
            ),
            CheckResult::new(
                "monotonic",
                "condition_fraction",
                None,
                &[
                    ("fraction", holds.len() as f64 / reports.len().max(1) as f64),
                    ("improved_fraction", improved_anyway as f64 / reports.len().max(1) as f64),
                ],
            ),
        ]
    }

    fn trust_region(&mut self) -> Vec<CheckResult> {
        let eps = PspoConfig::default().epsilon_trust;
        let mut all: Vec<IterationReport> = self.runs(EvaluationMode::ExactRegularized).concat();
        all.extend(self.runs(EvaluationMode::Stochastic).concat());
        let violations = all.iter().filter(|r| !r.within_trust_region(eps)).count();
        let max_kl = all.iter().map(|r| r.kl_max).fold(0.0, f64::max);
        vec![CheckResult::new(
            "trust_region",
            "max_state_kl",
            Some(violations == 0),
            &[
                ("iterations", all.len() as f64),
                ("epsilon", eps),
                ("max_kl", max_kl),
                ("violations", violations as f64),
            ],
        )]
    }
}

/// Fixed 2-state, 2-action fixture with two models and a frozen belief.
fn rm_error(gamma: f64, schedule: Schedule, updates: usize, seed: u64) -> f64 {
    let reward = Table::from_flat(2, 2, vec![1.0, 0.0, 0.0, 0.5]).expect("2x2");
    let a =
        TabularMdp::new(2, 2, vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.1, 0.9], reward.clone(), gamma, vec![0.5, 0.5], 1.0)
            .expect("valid fixture");
    let b = TabularMdp::new(2, 2, vec![0.1, 0.9, 0.7, 0.3, 0.3, 0.7, 0.6, 0.4], reward, gamma, vec![0.5, 0.5], 1.0)
        .expect("valid fixture");
    let ens = ModelEnsemble::new(vec![CategoricalModel::from_mdp(&a), CategoricalModel::from_mdp(&b)], vec![0, 1])
        .expect("same shapes");
    let belief = Belief::from_posterior(vec![0.5, 0.5], vec![0.3, 0.7], 1.0).expect("simplex");
    let pi = SoftPolicy::new(Table::from_flat(2, 2, vec![0.6, 0.4, 0.25, 0.75]).expect("2x2")).expect("simplex");
    let nv = NextValue::Expected(&pi);
    let kernel = MixtureKernel::from_ensemble(&ens, &belief, gamma).expect("valid belief");
    let (q_star, _) = kernel.fixed_point(&QFunction::zeros(2, 2), nv, 1e-14, 100_000).expect("contraction");
    let queries = [Query::pair(0, 0), Query::pair(0, 1), Query::pair(1, 0), Query::pair(1, 1)];
    let mut rng = rng_from_seed(seed);
    let mut q = QFunction::zeros(2, 2);
    for t in 0..updates {
        q = stochastic_q_update(&q, &queries, nv, &ens, &belief, gamma, 1.0, schedule.step_size(t), &mut rng)
            .expect("valid update")
            .0;
    }
    q.max_norm_diff(&q_star)
}

fn robbins_monro(config: &ExperimentConfig) -> Vec<CheckResult> {
    let schedule = Schedule::robbins_monro(1.0, 1.0).expect("valid schedule");
    let errs: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|k| rm_error(0.5, schedule, 200_000, check_seed(config, "robbins_monro", k)))
        .collect();
    let median = stats::median(&errs);
    vec![CheckResult::new(
        "robbins_monro",
        "median_sup_error",
        Some(median < 1e-2),
        &[("seeds", 10.0), ("updates", 2e5), ("gamma", 0.5), ("median_error", median)],
    )]
}

fn posterior(config: &ExperimentConfig) -> Vec<CheckResult> {
    const GRID: f64 = 1e-3;
    let errs: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(check_seed(config, "posterior", i));
            let n = rng.random_range(1..=3);
            let beta = rng.random_range(0.1..=10.0);
            let prior: Vec<f64> = random_simplex(&mut rng, n);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            let belief = Belief::new(prior, beta).expect("simplex prior");
            let scores = ConsistencyScore::new(scores).expect("finite scores");
            let exact = posterior_update(&belief, &scores).expect("finite scores");
            let grid = posterior_brute_force(&belief, &scores, GRID).expect("n ≤ 3");
            exact.posterior().iter().zip(&grid).map(|(a, b)| (a - b).abs()).sum()
        })
        .collect();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    vec![CheckResult::new(
        "posterior",
        "matches_brute_force",
        Some(worst <= 2.0 * GRID),
        &[("instances", 200.0), ("grid_step", GRID), ("max_l1", worst)],
    )]
}

fn closed_form(config: &ExperimentConfig) -> Vec<CheckResult> {
    const STEPS: usize = 1000;
    let margins: Vec<f64> = (0..config.checks.instances as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(check_seed(config, "closed_form", i));
            let ns = rng.random_range(1..=6);
            let alpha = rng.random_range(0.1..2.0);
            let q = random_q::<f64>(&mut rng, ns, 2, 10.0);
            let mu = random_policy(&mut rng, ns, 2);
            let pi = closed_form_optimal_policy(&q, &mu, alpha).expect("positive alpha");
            (0..ns)
                .map(|s| {
                    let best = regularized_state_objective(q.row(s), pi.row(s), mu.row(s), alpha);
                    let grid = (0..=STEPS)
                        .map(|k| {
                            let p = k as f64 / STEPS as f64;
                            regularized_state_objective(q.row(s), &[p, 1.0 - p], mu.row(s), alpha)
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    best - grid
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    vec![CheckResult::new(
        "closed_form",
        "beats_simplex_grid",
        Some(worst >= -1e-9),
        &[("instances", margins.len() as f64), ("grid_step", 1e-3), ("min_margin", worst)],
    )]
}

fn ou(config: &ExperimentConfig) -> Vec<CheckResult> {
    const STEPS: usize = 1_000_000;
    let p = config.liquidation.ou;
    let var_oracle = p.sigma * p.sigma / (2.0 * p.theta);
    let path = |step: fn(&OuParams, f64, &mut pspo_core::seed::Rng) -> f64| {
        let mut rng = rng_from_seed(check_seed(config, "ou", 0));
        let mut x = p.mu_rate;
        let xs: Vec<f64> = (0..STEPS)
            .map(|_| {
                x = step(&p, x, &mut rng);
                x
            })
            .collect();
        (stats::mean(&xs), stats::population_variance(&xs))
    };
    let (mean, var) = path(ou_transition);
    let (clamped_mean, clamped_var) = path(ou_step);
    vec![
        CheckResult::new(
            "ou",
            "stationary_moments",
            Some((mean - p.mu_rate).abs() < 0.01 && (var / var_oracle - 1.0).abs() < 0.05),
            &[
                ("steps", STEPS as f64),
                ("mean", p.mu_rate),
                ("measured_mean", mean),
                ("variance", var_oracle),
                ("measured_variance", var),
            ],
        ),
        CheckResult::new(
            "ou",
            "clamped_chain_moments",
            None,
            &[("measured_mean", clamped_mean), ("measured_variance", clamped_var)],
        )
        .with_note("the environment floors the rate at zero"),
    ]
}

/// Uncertainty/TD-target correlation on the run directory's liquidation
/// artifacts. Without a trained policy the untrained critic is used and
/// no pass/fail is applied.
fn correlation(config: &ExperimentConfig) -> Result<Vec<CheckResult>> {
    let ens_path = config.out.join(ENSEMBLE);
    let skip =
        |note: &str| Ok(vec![CheckResult::new("correlation", "uncertainty_vs_td_target", None, &[]).with_note(note)]);
    if config.track != Track::Liquidation {
        return skip("liquidation track only");
    }
    if !ens_path.exists() {
        return skip("no trained ensemble in the run directory");
    }
    let ensemble = read_json(&ens_path)?;
    let dataset = read_dataset(&config.data.path.clone().unwrap_or_else(|| config.out.join(DATASET)))?;
    let seed = config.train_seeds[0];
    let policy_path = config.out.join(policy_file("full", seed));
    let (outcome, trained) = if policy_path.exists() {
        match read_json::<PolicyArtifact>(&policy_path)? {
            PolicyArtifact::Liquidation { policy, target_policy, q, target_q, belief, .. } => {
                (ContinuousOutcome { policy, target_policy, q, target_q, belief, reports: Vec::new() }, true)
            }
            PolicyArtifact::Tabular { .. } => {
                return Err(HarnessError::Usage(format!("{} is a tabular policy", policy_path.display())))
            }
        }
    } else {
        let env = &config.liquidation;
        let policy = LinearSoftPolicy::new(env.behavior_probs(), FEATURE_DIM);
        let q = LinearQ::zeros(env.n_actions(), FEATURE_DIM);
        let belief = Belief::uniform(config.pspo.ensemble_size, config.pspo.beta);
        (
            ContinuousOutcome {
                target_policy: policy.clone(),
                policy,
                target_q: q.clone(),
                q,
                belief,
                reports: Vec::new(),
            },
            false,
        )
    };
    let run = LiquidationRun { env: &config.liquidation, dataset: &dataset, ensemble: &ensemble, eval_episodes: 0 };
    let n = config.checks.diagnostic_pairs;
    let (u, y) = uncertainty_diagnostic(&run, &config.pspo, &outcome, n, check_seed(config, "correlation", seed))?;
    let rows: Vec<Vec<String>> = u.iter().zip(&y).map(|(a, b)| vec![sig9(*a), sig9(*b)]).collect();
    write_csv(&config.out.join(DIAGNOSTIC_FILE), &["uncertainty", "td_target"], &rows)?;
    let rho = stats::spearman(&u, &y);
    let result = CheckResult::new(
        "correlation",
        "uncertainty_vs_td_target",
        trained.then_some(rho < 0.0),
        &[("pairs", u.len() as f64), ("spearman", rho), ("policy_seed", seed as f64)],
    );
    Ok(vec![if trained { result } else { result.with_note("untrained critic; reported only") }])
}
