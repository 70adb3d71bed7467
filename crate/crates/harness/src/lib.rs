//! Experiment harness: configuration, seeded pipeline phases, invariant
//! check suites and plot exports.

pub mod checks;
pub mod config;
pub mod error;
pub mod format;
pub mod pipeline;
pub mod plots;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
