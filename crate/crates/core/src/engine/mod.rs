//! Posterior-sampling policy optimization: operators, policy improvement and
//! training loops.

pub mod config;
pub mod continuous;
pub mod fisher;
pub mod improvement;
pub mod operators;
pub mod report;
pub mod stochastic;
pub mod tabular;

pub use config::{EvaluationMode, NoRegMode, PspoConfig, Schedule, ScheduleKind};
pub use continuous::{
    train_continuous, uncertainty_td_pairs, ContinuousOutcome, ContinuousProblem, LinearQ, LinearSoftPolicy,
};
pub use fisher::{improvement_condition_check, ImprovementCondition};
pub use improvement::{
    closed_form_optimal_policy, constrained_improvement_step, regularized_state_objective, ImprovementStep,
    KlAggregation, TrustRegion,
};
pub use operators::{
    contraction_check, posterior_eval_operator, posterior_opt_operator, ContractionCheck, MixtureKernel,
};
pub use report::IterationReport;
pub use stochastic::{
    sample_targets, stochastic_q_update, value_bound, variance_bound_check, Query, UpdateFragment, VarianceCheck,
};
pub use tabular::{empirical_behavior_policy, fit_tabular_ensemble, train_tabular, TabularOutcome, TabularProblem};
