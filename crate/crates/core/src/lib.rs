//! Individualized treatment rules from observational data.
//!
//! The pipeline: split a table into development / validation / evaluation
//! parts, fit per-arm outcome models on the development part under
//! stabilized ratio-of-propensity observation weights, turn the fitted
//! pair into a treatment rule, compare candidate specifications on the
//! validation part, and estimate the deployed rule's benefit on the
//! evaluation part with IPW estimators and a percentile bootstrap.
//!
//! Everything is seeded and deterministic: identical inputs, seeds, and
//! configuration reproduce identical outputs regardless of thread count.

pub mod error;
pub mod evaluate;
pub mod glm;
pub mod propensity;
pub mod rule;
pub mod seeding;
pub mod select;
pub mod simulate;
pub mod splitting;
pub mod tabular;

/// Version tag embedded in every serialized rule and report.
pub const SCHEMA_VERSION: u32 = 1;

pub use error::{Error, Result};
pub use evaluate::{
    abr, evaluate_recommendations, evaluate_rule, ipw_ate, BootstrapSettings, Estimate,
    EvalSettings, EvaluationReport,
};
pub use glm::{CvPlan, DesignMatrix, FittedGlm, GlmSpec, LambdaChoice, Link, Penalty};
pub use propensity::{
    fit_propensity_pair, stabilized_weight, stabilized_weights, PropensityPair, Truncation,
    WeightSummary, WeightVector,
};
pub use rule::{build_rule, build_rule_with_weights, BuildSettings, TreatmentRule, Weighting};
pub use select::{
    compare_on_validation, CandidateGrid, CandidateSpec, CompareSettings, RankCriterion,
    ValidationReport,
};
pub use simulate::{
    benchmarks, generate, run_study, sim_roles, sim_schema, true_mean_outcome, Benchmarks, Method,
    SimCoefficients, SimConfig, SimPolicy, StudyGrid,
};
pub use splitting::{split, split_indices, SplitPart, SplitSpec};
pub use tabular::{
    encode, encode_with, load_csv, write_csv, Column, DataSchema, Dataset, DatasetMeta,
    EncodingMap, OutcomeKind, RoleAssignment,
};
