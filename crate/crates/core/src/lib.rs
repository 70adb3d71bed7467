//! Posterior-sampling policy optimization for model-based offline
//! reinforcement learning.
//!
//! Numerical code is generic over [`scalar::Scalar`]; the aliases below fix
//! the scalar to `f64`, which is what the training loops and the harness use.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. The scalar trait
// has no compound-assignment bounds.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::assign_op_pattern)]

pub mod belief;
pub mod data;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod liquidation;
pub mod mdp;
pub mod scalar;
pub mod seed;
pub mod stats;

pub use error::{PspoError, Result};

pub type Table = mdp::Table<f64>;
pub type TabularMdp = mdp::TabularMdp<f64>;
pub type SoftPolicy = mdp::SoftPolicy<f64>;
pub type QFunction = mdp::QFunction<f64>;
pub type CategoricalModel = dynamics::CategoricalModel<f64>;
pub type CategoricalEnsemble = dynamics::ModelEnsemble<dynamics::CategoricalModel<f64>>;
pub type MixtureKernel = engine::MixtureKernel<f64>;
pub type ImprovementStep = engine::ImprovementStep<f64>;
pub type TabularOutcome = engine::TabularOutcome<f64>;
