//! Experiment configuration: one TOML file plus `PSPO__<KEY>=value`
//! environment overrides.
//!
//! Override keys are case-insensitive. `__` separates nested sections, so
//! `PSPO__LIQUIDATION__HORIZON=50` sets `liquidation.horizon`. A single key
//! that is not a top-level field is looked up in the `[pspo]` section, so
//! `PSPO__ALPHA=0.5` sets `pspo.alpha`. Values are parsed as TOML literals
//! and fall back to strings.

use std::path::{Path, PathBuf};

use pspo_core::dynamics::GaussianFitConfig;
use pspo_core::engine::PspoConfig;
use pspo_core::liquidation::LiquidationConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const ENV_PREFIX: &str = "PSPO__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Tabular,
    Liquidation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    #[default]
    Uniform,
    /// Dirichlet(1) rows drawn with the instance seed.
    Random,
}

/// Random tabular instance and its offline dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub r_max: f64,
    pub n_records: usize,
    pub behavior: BehaviorKind,
}

impl Default for TabularSpec {
    fn default() -> Self {
        Self { n_states: 5, n_actions: 3, r_max: 1.0, n_records: 10_000, behavior: BehaviorKind::Uniform }
    }
}

/// Offline data source. `path` reuses an existing dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub episodes: usize,
    pub path: Option<PathBuf>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self { episodes: 2000, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub episodes: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { episodes: 100 }
    }
}

/// Check-suite selection and the liquidation diagnostic size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSpec {
    /// Empty selects every suite.
    pub suites: Vec<String>,
    pub instances: usize,
    pub diagnostic_pairs: usize,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self { suites: Vec::new(), instances: 20, diagnostic_pairs: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub track: Track,
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Training seeds (indices fed to the seed derivation).
    #[serde(default = "default_train_seeds")]
    pub train_seeds: Vec<u64>,
    #[serde(default)]
    pub pspo: PspoConfig,
    #[serde(default)]
    pub liquidation: LiquidationConfig,
    #[serde(default)]
    pub tabular: TabularSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub dynamics: GaussianFitConfig,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub checks: CheckSpec,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_train_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}

impl ExperimentConfig {
    /// Tuned liquidation settings used by the shipped example config.
    pub fn liquidation_default() -> Self {
        Self {
            name: "liquidation".into(),
            track: Track::Liquidation,
            seed: 0,
            out: default_out(),
            train_seeds: default_train_seeds(),
            pspo: liquidation_pspo(),
            liquidation: LiquidationConfig::default(),
            tabular: TabularSpec::default(),
            data: DataSpec::default(),
            dynamics: GaussianFitConfig { epochs: 200, ..Default::default() },
            eval: EvalSpec::default(),
            checks: CheckSpec::default(),
        }
    }

    pub fn tabular_default() -> Self {
        Self {
            name: "tabular".into(),
            track: Track::Tabular,
            pspo: PspoConfig { iterations: 50, ..Default::default() },
            ..Self::liquidation_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pspo.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.liquidation.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.train_seeds.is_empty() {
            return Err(HarnessError::Config("train_seeds must not be empty".into()));
        }
        let t = &self.tabular;
        if t.n_states == 0 || t.n_actions == 0 || t.n_records == 0 || t.r_max.is_nan() || t.r_max <= 0.0 {
            return Err(HarnessError::Config("tabular sizes and r_max must be positive".into()));
        }
        if self.data.episodes == 0 || self.eval.episodes == 0 {
            return Err(HarnessError::Config("data.episodes and eval.episodes must be positive".into()));
        }
        Ok(())
    }

    /// Parses TOML text, applies overrides, and validates.
    pub fn from_toml_with_overrides<I, K, V>(text: &str, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        for (k, v) in overrides {
            if let Some(key) = k.as_ref().strip_prefix(ENV_PREFIX) {
                apply_override(&mut value, key, v.as_ref())?;
            }
        }
        let config: Self = value.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Liquidation training settings: finite horizon with undiscounted
/// evaluation, rewards of order 100, and a fast target critic.
pub fn liquidation_pspo() -> PspoConfig {
    PspoConfig {
        alpha: 1.0,
        gamma: 0.999,
        polyak: 0.05,
        iterations: 300,
        schedule_kind: pspo_core::engine::ScheduleKind::Constant,
        schedule_c: 1.0,
        ..Default::default()
    }
}

const TOP_LEVEL: [&str; 12] = [
    "name",
    "track",
    "seed",
    "out",
    "train_seeds",
    "pspo",
    "liquidation",
    "tabular",
    "data",
    "dynamics",
    "eval",
    "checks",
];

fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let mut path: Vec<String> = key.split("__").map(|s| s.to_ascii_lowercase()).collect();
    if path.iter().any(String::is_empty) {
        return Err(HarnessError::Config(format!("malformed override key {ENV_PREFIX}{key}")));
    }
    if path.len() == 1 && !TOP_LEVEL.contains(&path[0].as_str()) {
        path.insert(0, "pspo".into());
    }
    let value = parse_literal(raw);
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        table = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override {ENV_PREFIX}{key}: `{p}` is not a section")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "name = \"t\"\ntrack = \"tabular\"\nseed = 3\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let c = ExperimentConfig::from_toml_with_overrides(MINIMAL, Vec::<(String, String)>::new()).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.pspo, PspoConfig::default());
        assert_eq!(c.train_seeds, vec![0, 1, 2, 3]);
    }

    #[test]
    fn overrides_take_precedence() {
        let text = format!("{MINIMAL}[pspo]\nalpha = 0.3\n");
        let env = [
            ("PSPO__ALPHA", "0.7"),
            ("PSPO__LIQUIDATION__HORIZON", "50"),
            ("PSPO__SEED", "9"),
            ("PSPO__KL_AGGREGATION", "weighted_mean"),
            ("HOME", "/root"),
        ];
        let c = ExperimentConfig::from_toml_with_overrides(&text, env).unwrap();
        assert_eq!(c.pspo.alpha, 0.7);
        assert_eq!(c.liquidation.horizon, 50);
        assert_eq!(c.seed, 9);
        assert_eq!(c.pspo.kl_aggregation, pspo_core::engine::KlAggregation::WeightedMean);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let bad = format!("{MINIMAL}bogus = 1\n");
        assert!(matches!(
            ExperimentConfig::from_toml_with_overrides(&bad, Vec::<(String, String)>::new()),
            Err(HarnessError::Config(_))
        ));
        let env = [("PSPO__GAMMA", "1.5")];
        assert!(matches!(ExperimentConfig::from_toml_with_overrides(MINIMAL, env), Err(HarnessError::Config(_))));
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::liquidation_default();
        let back =
            ExperimentConfig::from_toml_with_overrides(&c.to_toml().unwrap(), Vec::<(String, String)>::new()).unwrap();
        assert_eq!(c, back);
    }
}
