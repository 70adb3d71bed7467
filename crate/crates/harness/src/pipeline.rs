//! Seeded pipeline phases. Every phase reads its inputs from and writes its
//! outputs to the run directory, and records file digests in the manifest.
//!
//! Run directory layout:
//!
//! | file | phase |
//! |------|-------|
//! | `dataset.ndjson` (+ `instance.json`, `coverage.json` on the tabular track) | gen-data |
//! | `ensemble.json`, `dynamics.csv` | train-dynamics |
//! | `policy_<variant>_seed<k>.json`, `iterations_<variant>_seed<k>.csv` | train-pspo |
//! | `eval.csv` | eval |
//! | `ablation.csv` | ablate |
//! | `manifest.json` | every phase |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pspo_core::belief::Belief;
use pspo_core::data::OfflineDataset;
use pspo_core::engine::{
    empirical_behavior_policy, fit_tabular_ensemble, train_tabular, IterationReport, LinearQ, LinearSoftPolicy,
    PspoConfig, TabularProblem,
};
use pspo_core::liquidation::{
    evaluate_policy, fit_liquidation_ensemble, generate_liquidation_dataset, train_liquidation, tune_threshold,
    ActionPolicy, BehaviorPolicy, Immediate, LearnedPolicy, LiquidationEnsemble, LiquidationFeatures, LiquidationRun,
    UniformTwap,
};
use pspo_core::mdp::expected_return;
use pspo_core::mdp::random::{random_mdp, random_policy, sample_dataset};
use pspo_core::seed::{derive_seed, rng_from_seed};
use pspo_core::{CategoricalEnsemble, QFunction, SoftPolicy, TabularMdp};
use serde::{Deserialize, Serialize};

use crate::config::{BehaviorKind, ExperimentConfig, Track};
use crate::error::{HarnessError, Result};
use crate::format::{opt9, read_json, sha256_file, sig9, write_bytes, write_csv, write_json};

pub const MANIFEST: &str = "manifest.json";
pub const DATASET: &str = "dataset.ndjson";
pub const INSTANCE: &str = "instance.json";
pub const COVERAGE: &str = "coverage.json";
pub const ENSEMBLE: &str = "ensemble.json";
pub const DYNAMICS_LOG: &str = "dynamics.csv";
pub const EVAL: &str = "eval.csv";
pub const ABLATION: &str = "ablation.csv";

pub const VARIANTS: [&str; 3] = ["full", "average_utilization", "without_regularization"];

pub const ITERATION_HEADER: [&str; 20] = [
    "iteration",
    "variant",
    "seed",
    "mean_target",
    "target_variance",
    "variance_bound",
    "regularized_return",
    "return_before",
    "return_after",
    "true_return",
    "kl_step",
    "kl_max",
    "lambda",
    "condition_holds",
    "condition_lhs",
    "condition_rhs",
    "improved",
    "uncertainty_td_corr",
    "posterior_entropy",
    "posterior_max",
];

pub const EVAL_HEADER: [&str; 6] = ["policy", "variant", "seed", "mean_return", "std_return", "normalized_score"];

/// Everything needed to re-invoke a run, plus what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    /// File name → SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
    /// Invariant or check name → pass.
    pub checks: BTreeMap<String, bool>,
    /// Phase → wall-clock seconds.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn load_or_new(config: &ExperimentConfig) -> Result<Self> {
        let path = config.out.join(MANIFEST);
        let mut manifest = if path.exists() {
            read_json::<Self>(&path)?
        } else {
            Self {
                config: config.clone(),
                artifacts: BTreeMap::new(),
                checks: BTreeMap::new(),
                timings: BTreeMap::new(),
            }
        };
        manifest.config = config.clone();
        Ok(manifest)
    }

    fn record(&mut self, out: &Path, file: &str) -> Result<()> {
        self.artifacts.insert(file.to_string(), sha256_file(&out.join(file))?);
        Ok(())
    }

    pub(crate) fn save(&self, out: &Path) -> Result<()> {
        write_json(&out.join(MANIFEST), self)
    }
}

/// Records the phase timing and artifact digests, then saves the manifest.
pub(crate) fn finish_phase(
    config: &ExperimentConfig,
    phase: &str,
    files: &[String],
    start: Instant,
) -> Result<RunManifest> {
    let mut m = RunManifest::load_or_new(config)?;
    for f in files {
        m.record(&config.out, f)?;
    }
    m.timings.insert(phase.to_string(), start.elapsed().as_secs_f64());
    m.save(&config.out)?;
    Ok(m)
}

/// Seed used by `component` in this experiment.
pub fn seed_for(config: &ExperimentConfig, component: &str, index: u64) -> u64 {
    derive_seed(config.seed, component, index)
}

/// Random tabular instance with its behavior policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularInstance {
    pub mdp: TabularMdp,
    pub behavior: SoftPolicy,
}

impl TabularInstance {
    pub fn generate(config: &ExperimentConfig) -> Self {
        let t = &config.tabular;
        let seed = seed_for(config, "instance", 0);
        let mdp = random_mdp(t.n_states, t.n_actions, config.pspo.gamma, t.r_max, seed);
        let behavior = match t.behavior {
            BehaviorKind::Uniform => SoftPolicy::uniform(t.n_states, t.n_actions),
            BehaviorKind::Random => {
                random_policy(&mut rng_from_seed(derive_seed(seed, "behavior", 0)), t.n_states, t.n_actions)
            }
        };
        Self { mdp, behavior }
    }
}

/// Visited state-action pairs in a tabular dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub records: usize,
    pub visited_pairs: usize,
    pub total_pairs: usize,
    pub min_count: usize,
}

pub fn tabular_coverage(dataset: &OfflineDataset<usize>, n_states: usize, n_actions: usize) -> Coverage {
    let mut counts = vec![0usize; n_states * n_actions];
    for r in dataset.records() {
        counts[r.s * n_actions + r.a] += 1;
    }
    Coverage {
        records: dataset.len(),
        visited_pairs: counts.iter().filter(|&&c| c > 0).count(),
        total_pairs: counts.len(),
        min_count: counts.iter().copied().min().unwrap_or(0),
    }
}

fn dataset_path(config: &ExperimentConfig) -> PathBuf {
    config.data.path.clone().unwrap_or_else(|| config.out.join(DATASET))
}

fn write_dataset<S: Clone + Serialize + serde::de::DeserializeOwned>(
    path: &Path,
    dataset: &OfflineDataset<S>,
) -> Result<()> {
    let mut bytes = Vec::new();
    dataset.write_ndjson(&mut bytes)?;
    write_bytes(path, &bytes)
}

pub fn read_dataset<S: Clone + Serialize + serde::de::DeserializeOwned>(path: &Path) -> Result<OfflineDataset<S>> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(OfflineDataset::read_ndjson(BufReader::new(file))?)
}

/// Writes the offline dataset (and the tabular instance).
pub fn gen_data(config: &ExperimentConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let out = &config.out;
    let seed = seed_for(config, "dataset", 0);
    let mut files = vec![DATASET.to_string()];
    match config.track {
        Track::Liquidation => {
            let data = generate_liquidation_dataset(&config.liquidation, config.data.episodes, seed)?;
            write_dataset(&out.join(DATASET), &data)?;
        }
        Track::Tabular => {
            let inst = TabularInstance::generate(config);
            let data = sample_dataset(&inst.mdp, &inst.behavior, config.tabular.n_records, seed);
            write_dataset(&out.join(DATASET), &data)?;
            write_json(&out.join(INSTANCE), &inst)?;
            write_json(&out.join(COVERAGE), &tabular_coverage(&data, inst.mdp.n_states(), inst.mdp.n_actions()))?;
            files.extend([INSTANCE.to_string(), COVERAGE.to_string()]);
        }
    }
    finish_phase(config, "gen_data", &files, start)
}

/// Mean negative log-likelihood of the dataset's next states.
fn categorical_nll(model: &pspo_core::CategoricalModel, dataset: &OfflineDataset<usize>) -> f64 {
    let total: f64 = dataset.records().iter().map(|r| -model.next_row(r.s, r.a)[r.s2].max(1e-300).ln()).sum();
    total / dataset.len() as f64
}

/// Fits the dynamics ensemble and logs per-member NLL.
pub fn train_dynamics(config: &ExperimentConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let out = &config.out;
    let seed = seed_for(config, "dynamics", 0);
    let mut rows = Vec::new();
    match config.track {
        Track::Liquidation => {
            let data = read_dataset::<Vec<f64>>(&dataset_path(config))?;
            let (ens, reports) =
                fit_liquidation_ensemble(&data, &config.liquidation, &config.pspo, &config.dynamics, seed)?;
            for (j, r) in reports.iter().enumerate() {
                let active = ens.active_indices().contains(&j);
                rows.push(vec![j.to_string(), active.to_string(), sig9(r.initial_nll()), sig9(r.final_nll())]);
            }
            write_json(&out.join(ENSEMBLE), &ens)?;
        }
        Track::Tabular => {
            let data = read_dataset::<usize>(&dataset_path(config))?;
            let t = &config.tabular;
            let ens = fit_tabular_ensemble::<f64>(&data, t.n_states, t.n_actions, &config.pspo, seed)?;
            for (j, m) in ens.pool().iter().enumerate() {
                let active = ens.active_indices().contains(&j);
                rows.push(vec![j.to_string(), active.to_string(), String::new(), sig9(categorical_nll(m, &data))]);
            }
            write_json(&out.join(ENSEMBLE), &ens)?;
        }
    }
    write_csv(&out.join(DYNAMICS_LOG), &["member", "active", "initial_nll", "final_nll"], &rows)?;
    finish_phase(config, "train_dynamics", &[ENSEMBLE.to_string(), DYNAMICS_LOG.to_string()], start)
}

/// Trained policy artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "track", rename_all = "snake_case")]
pub enum PolicyArtifact {
    Tabular {
        variant: String,
        seed: u64,
        policy: SoftPolicy,
        q: QFunction,
        belief: Belief,
    },
    Liquidation {
        variant: String,
        seed: u64,
        policy: LinearSoftPolicy,
        target_policy: LinearSoftPolicy,
        q: LinearQ,
        target_q: LinearQ,
        belief: Belief,
    },
}

impl PolicyArtifact {
    pub fn variant(&self) -> &str {
        match self {
            Self::Tabular { variant, .. } | Self::Liquidation { variant, .. } => variant,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Tabular { seed, .. } | Self::Liquidation { seed, .. } => *seed,
        }
    }
}

pub fn policy_file(variant: &str, seed: u64) -> String {
    format!("policy_{variant}_seed{seed}.json")
}

pub fn iterations_file(variant: &str, seed: u64) -> String {
    format!("iterations_{variant}_seed{seed}.csv")
}

/// The PSPO settings of a named variant.
pub fn variant_config(base: &PspoConfig, variant: &str) -> Result<PspoConfig> {
    let mut c = base.clone();
    match variant {
        "full" => {
            c.average_utilization = false;
            c.without_regularization = false;
        }
        "average_utilization" => c.average_utilization = true,
        "without_regularization" => c.without_regularization = true,
        other => return Err(HarnessError::Usage(format!("unknown variant `{other}`; expected one of {VARIANTS:?}"))),
    }
    Ok(c)
}

pub fn iteration_rows(reports: &[IterationReport], variant: &str, seed: u64) -> Vec<Vec<String>> {
    let flag = |b: Option<bool>| b.map(|b| b.to_string()).unwrap_or_default();
    reports
        .iter()
        .map(|r| {
            let entropy: f64 = -r.posterior.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            let pmax = r.posterior.iter().copied().fold(0.0, f64::max);
            vec![
                r.iteration.to_string(),
                variant.to_string(),
                seed.to_string(),
                sig9(r.mean_target),
                sig9(r.target_variance),
                sig9(r.variance_bound),
                sig9(r.regularized_return),
                opt9(r.return_before),
                opt9(r.return_after),
                opt9(r.true_return),
                sig9(r.kl_step),
                sig9(r.kl_max),
                sig9(r.lambda),
                flag(r.condition_holds),
                opt9(r.condition_lhs),
                opt9(r.condition_rhs),
                flag(r.improved),
                opt9(r.uncertainty_td_corr),
                sig9(entropy),
                sig9(pmax),
            ]
        })
        .collect()
}

/// Per-run invariant summary: variance bound and trust region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvariantSummary {
    pub variance_violations: usize,
    pub trust_region_violations: usize,
}

impl InvariantSummary {
    pub fn of(reports: &[IterationReport], epsilon: f64) -> Self {
        Self {
            variance_violations: reports.iter().filter(|r| !r.variance_within_bound()).count(),
            trust_region_violations: reports.iter().filter(|r| !r.within_trust_region(epsilon)).count(),
        }
    }

    pub fn ok(&self) -> bool {
        self.variance_violations == 0 && self.trust_region_violations == 0
    }
}

/// Loaded inputs of the training phase.
pub enum Inputs {
    Tabular { dataset: OfflineDataset<usize>, instance: TabularInstance, ensemble: CategoricalEnsemble },
    Liquidation { dataset: OfflineDataset<Vec<f64>>, ensemble: LiquidationEnsemble },
}

impl Inputs {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let out = &config.out;
        Ok(match config.track {
            Track::Tabular => Inputs::Tabular {
                dataset: read_dataset(&dataset_path(config))?,
                instance: read_json(&out.join(INSTANCE))?,
                ensemble: read_json(&out.join(ENSEMBLE))?,
            },
            Track::Liquidation => Inputs::Liquidation {
                dataset: read_dataset(&dataset_path(config))?,
                ensemble: read_json(&out.join(ENSEMBLE))?,
            },
        })
    }
}

/// One training run and its reports.
pub fn train_one(
    config: &ExperimentConfig,
    inputs: &Inputs,
    variant: &str,
    seed_index: u64,
) -> Result<(PolicyArtifact, Vec<IterationReport>)> {
    let pspo = variant_config(&config.pspo, variant)?;
    let seed = seed_for(config, "pspo", seed_index);
    match inputs {
        Inputs::Tabular { dataset, instance, ensemble } => {
            let (ns, na) = (instance.mdp.n_states(), instance.mdp.n_actions());
            let mu = empirical_behavior_policy(dataset, ns, na, pspo.smoothing)?;
            let problem = TabularProblem {
                dataset,
                ensemble,
                reference: &mu,
                rho0: instance.mdp.rho0(),
                r_max: config.tabular.r_max,
                true_mdp: Some(&instance.mdp),
            };
            let out = train_tabular(&problem, &pspo, seed)?;
            let artifact = PolicyArtifact::Tabular {
                variant: variant.into(),
                seed: seed_index,
                policy: out.policy,
                q: out.q,
                belief: out.belief,
            };
            Ok((artifact, out.reports))
        }
        Inputs::Liquidation { dataset, ensemble } => {
            let run =
                LiquidationRun { env: &config.liquidation, dataset, ensemble, eval_episodes: config.eval.episodes };
            let out = train_liquidation(&run, &pspo, seed)?;
            let artifact = PolicyArtifact::Liquidation {
                variant: variant.into(),
                seed: seed_index,
                policy: out.policy,
                target_policy: out.target_policy,
                q: out.q,
                target_q: out.target_q,
                belief: out.belief,
            };
            Ok((artifact, out.reports))
        }
    }
}

/// Trains `variant` for every configured seed. Artifacts are written
/// before invariant violations are reported as a check failure.
pub fn train_pspo(config: &ExperimentConfig, variant: &str) -> Result<RunManifest> {
    train_variants(config, &[variant])
}

/// Trains every variant in [`VARIANTS`] and writes `ablation.csv`.
pub fn ablate(config: &ExperimentConfig) -> Result<RunManifest> {
    train_variants(config, &VARIANTS)?;
    let start = Instant::now();
    let rows = evaluate_artifacts(config, &VARIANTS)?.into_iter().filter(|r| r[0] == "pspo").collect::<Vec<_>>();
    write_csv(&config.out.join(ABLATION), &EVAL_HEADER, &rows)?;
    finish_phase(config, "ablate_eval", &[ABLATION.to_string()], start)
}

fn train_variants(config: &ExperimentConfig, variants: &[&str]) -> Result<RunManifest> {
    let start = Instant::now();
    let inputs = Inputs::load(config)?;
    let mut files = Vec::new();
    let mut failures = Vec::new();
    let mut checks = BTreeMap::new();
    for &variant in variants {
        for &k in &config.train_seeds {
            let (artifact, reports) = train_one(config, &inputs, variant, k)?;
            let pf = policy_file(variant, k);
            let cf = iterations_file(variant, k);
            write_json(&config.out.join(&pf), &artifact)?;
            write_csv(&config.out.join(&cf), &ITERATION_HEADER, &iteration_rows(&reports, variant, k))?;
            let summary = InvariantSummary::of(&reports, config.pspo.epsilon_trust);
            checks.insert(format!("variance_bound:{variant}:seed{k}"), summary.variance_violations == 0);
            checks.insert(format!("trust_region:{variant}:seed{k}"), summary.trust_region_violations == 0);
            if !summary.ok() {
                failures.push(format!(
                    "{variant} seed {k}: {} variance-bound and {} trust-region violations",
                    summary.variance_violations, summary.trust_region_violations
                ));
            }
            files.extend([pf, cf]);
        }
    }
    let mut m = finish_phase(config, "train_pspo", &files, start)?;
    m.checks.extend(checks);
    m.save(&config.out)?;
    if failures.is_empty() {
        Ok(m)
    } else {
        Err(HarnessError::CheckFailed(failures.join("; ")))
    }
}

/// Evaluation rows for every policy artifact of `variants` plus baselines.
fn evaluate_artifacts(config: &ExperimentConfig, variants: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    let n = config.eval.episodes;
    let env = &config.liquidation;
    let instance = match config.track {
        Track::Tabular => Some(read_json::<TabularInstance>(&config.out.join(INSTANCE))?),
        Track::Liquidation => None,
    };
    for &variant in variants {
        for &k in &config.train_seeds {
            let path = config.out.join(policy_file(variant, k));
            if !path.exists() {
                continue;
            }
            let artifact: PolicyArtifact = read_json(&path)?;
            let eval_seed = seed_for(config, "eval", k);
            let row = match (&artifact, &instance) {
                (PolicyArtifact::Tabular { policy, .. }, Some(inst)) => {
                    let j = expected_return(&inst.mdp, policy)?;
                    vec![sig9(j), "0".into(), String::new()]
                }
                (PolicyArtifact::Liquidation { policy, .. }, None) => {
                    let learned =
                        LearnedPolicy { policy: policy.clone(), features: LiquidationFeatures::from_config(env) };
                    let e = evaluate_policy(env, &learned, n, eval_seed)?;
                    vec![sig9(e.mean), sig9(e.std), sig9(e.score)]
                }
                _ => {
                    return Err(HarnessError::Usage(format!("{} does not match the configured track", path.display())))
                }
            };
            let mut full = vec!["pspo".to_string(), variant.to_string(), k.to_string()];
            full.extend(row);
            rows.push(full);
        }
    }
    Ok(rows)
}

/// Baseline evaluations on the liquidation track.
fn evaluate_baselines(config: &ExperimentConfig) -> Result<Vec<Vec<String>>> {
    let env = &config.liquidation;
    let n = config.eval.episodes;
    let seed = seed_for(config, "eval_baselines", 0);
    let grid: Vec<f64> = (0..=30).map(|i| 1.0 + 0.05 * i as f64).collect();
    let (threshold, _) = tune_threshold(env, &grid, 2000, seed_for(config, "threshold_tuning", 0))?;
    let baselines: [(&str, &dyn ActionPolicy); 4] = [
        ("behavior", &BehaviorPolicy),
        ("immediate", &Immediate),
        ("uniform_twap", &UniformTwap),
        ("oracle_threshold", &threshold),
    ];
    baselines
        .iter()
        .map(|(name, p)| {
            let e = evaluate_policy(env, *p, n, seed)?;
            Ok(vec![name.to_string(), String::new(), String::new(), sig9(e.mean), sig9(e.std), sig9(e.score)])
        })
        .collect()
}

/// Evaluates every trained policy in the run directory. Liquidation runs
/// also evaluate the baselines; tabular runs report exact returns.
pub fn eval(config: &ExperimentConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let mut rows = evaluate_artifacts(config, &VARIANTS)?;
    if rows.is_empty() {
        return Err(HarnessError::Usage(format!("no policy files in {}", config.out.display())));
    }
    if config.track == Track::Liquidation {
        rows.extend(evaluate_baselines(config)?);
    }
    write_csv(&config.out.join(EVAL), &EVAL_HEADER, &rows)?;
    finish_phase(config, "eval", &[EVAL.to_string()], start)
}

/// gen-data → train-dynamics → train-pspo (full) → eval.
pub fn run_all(config: &ExperimentConfig) -> Result<RunManifest> {
    gen_data(config)?;
    train_dynamics(config)?;
    train_pspo(config, "full")?;
    eval(config)
}
