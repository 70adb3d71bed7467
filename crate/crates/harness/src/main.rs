use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pspo_harness::checks::{run_checks, select_suites};
use pspo_harness::pipeline::{self, RunManifest};
use pspo_harness::plots::{available_metrics, export_curves, export_scatter};
use pspo_harness::{ExperimentConfig, HarnessError, Result};

/// Posterior-sampling policy optimization experiments.
#[derive(Parser)]
#[command(name = "pspo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). `PSPO__<KEY>` environment variables override it.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the offline dataset.
    GenData(Common),
    /// Fit the dynamics ensemble.
    TrainDynamics(Common),
    /// Train one variant for every configured seed.
    TrainPspo {
        #[command(flatten)]
        common: Common,
        /// full, average_utilization or without_regularization.
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Evaluate the trained policies (and liquidation baselines).
    Eval(Common),
    /// Run property suites.
    Check {
        #[command(flatten)]
        common: Common,
        /// Comma-separated suite names; defaults to the config selection.
        #[arg(long, value_delimiter = ',')]
        suite: Vec<String>,
    },
    /// Train every variant for every seed and tabulate final scores.
    Ablate(Common),
    /// Write long-format curve and scatter CSVs.
    ExportPlots {
        /// Iteration CSVs.
        inputs: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated metrics; defaults to every metric of the first input.
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
        /// Diagnostic CSV with `uncertainty,td_target` columns.
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
}

fn summarize(m: &RunManifest) {
    for (file, hash) in &m.artifacts {
        println!("{file} sha256:{hash}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => summarize(&pipeline::gen_data(&c.load()?)?),
        Command::TrainDynamics(c) => summarize(&pipeline::train_dynamics(&c.load()?)?),
        Command::TrainPspo { common, variant } => summarize(&pipeline::train_pspo(&common.load()?, &variant)?),
        Command::Eval(c) => {
            let config = c.load()?;
            pipeline::eval(&config)?;
            print!(
                "{}",
                std::fs::read_to_string(config.out.join(pipeline::EVAL))
                    .map_err(|e| HarnessError::io(pipeline::EVAL, e))?
            );
        }
        Command::Ablate(c) => {
            let config = c.load()?;
            let result = pipeline::ablate(&config);
            let path = config.out.join(pipeline::ABLATION);
            if path.exists() {
                print!("{}", std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?);
            }
            result?;
        }
        Command::Check { common, suite } => {
            let config = common.load()?;
            let names = if suite.is_empty() { config.checks.suites.clone() } else { suite };
            let results = run_checks(&config, &select_suites(&names)?)?;
            for r in &results {
                println!("{}", r.line());
            }
            let failed: Vec<String> = results
                .iter()
                .filter(|r| r.pass == Some(false))
                .map(|r| format!("{}/{}", r.suite, r.property))
                .collect();
            if !failed.is_empty() {
                return Err(HarnessError::CheckFailed(failed.join(", ")));
            }
        }
        Command::ExportPlots { inputs, out, metrics, scatter } => {
            if inputs.is_empty() && scatter.is_none() {
                return Err(HarnessError::Usage("give iteration CSVs and/or --scatter".into()));
            }
            if !inputs.is_empty() {
                let metrics = match metrics {
                    Some(m) => m.into_iter().filter(|s| !s.is_empty()).collect(),
                    None => available_metrics(&inputs[0])?,
                };
                let n = export_curves(&inputs, &metrics, &out.join("curves.csv"))?;
                println!("curves.csv: {n} rows");
            }
            if let Some(path) = scatter {
                let n = export_scatter(&path, &out.join("scatter.csv"))?;
                println!("scatter.csv: {n} rows");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
