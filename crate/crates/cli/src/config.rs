//! The TOML run configuration shared by every subcommand, plus its
//! resolution into core settings. Flags override config values; the seed
//! falls back to the `ITR_SEED` environment variable and then to 0. Every
//! report embeds the resolved form of this structure, so a run can be
//! reproduced from its output alone.

use std::fs;
use std::path::{Path, PathBuf};

use itr_core::evaluate::{BootstrapSettings, EvalSettings};
use itr_core::glm::{CvPlan, GlmSpec, LambdaChoice, Link, Penalty};
use itr_core::propensity::Truncation;
use itr_core::rule::{BuildSettings, Weighting};
use itr_core::select::{CandidateGrid, CandidateSpec, CompareSettings, RankCriterion};
use itr_core::simulate::{SimCoefficients, SimConfig};
use itr_core::splitting::SplitSpec;
use itr_core::tabular::{DataSchema, OutcomeKind};
use serde::{Deserialize, Serialize};

use crate::io::{Failure, Outcome};

pub const SEED_ENV: &str = "ITR_SEED";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    pub schema: Option<DataSchema>,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub propensity: PropensitySection,
    #[serde(default)]
    pub rule: RuleSection,
    #[serde(default)]
    pub cv: CvSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Outcome<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::validation(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Failure::validation(format!("invalid config {}: {e}", path.display())))
    }

    pub fn schema(&self) -> Outcome<&DataSchema> {
        self.schema
            .as_ref()
            .ok_or_else(|| Failure::validation("the config is missing its [schema] section"))
    }

    pub fn build_settings(
        &self,
        outcome_kind: OutcomeKind,
        cv_seed: u64,
    ) -> Outcome<BuildSettings> {
        let defaults = BuildSettings::defaults_for(outcome_kind);
        Ok(BuildSettings {
            propensity_numerator: model_or(&self.propensity.numerator, Link::Logit),
            propensity_denominator: model_or(&self.propensity.denominator, Link::Logit),
            rule_model: model_or(&self.rule.model, defaults.rule_model.link),
            truncation: self.propensity.truncation.to_core()?,
            weighting: self.rule.weighting,
            benefit_threshold: self.rule.benefit_threshold,
            cv: CvPlan {
                folds: self.cv.folds,
                seed: cv_seed,
            },
        })
    }

    pub fn eval_settings(&self, bootstrap_seed: u64, cv_seed: u64) -> Outcome<EvalSettings> {
        let bootstrap = if self.evaluation.bootstrap.replicates == 0 {
            None
        } else {
            Some(BootstrapSettings {
                replicates: self.evaluation.bootstrap.replicates,
                seed: bootstrap_seed,
                level: self.evaluation.bootstrap.level,
            })
        };
        Ok(EvalSettings {
            propensity: model_or(&self.evaluation.propensity, Link::Logit),
            truncation: self.evaluation.truncation.to_core()?,
            bootstrap,
            cv: CvPlan {
                folds: self.cv.folds,
                seed: cv_seed,
            },
        })
    }

    pub fn compare_settings(&self, cv_seed: u64) -> Outcome<CompareSettings> {
        Ok(CompareSettings {
            truncation: self.evaluation.truncation.to_core()?,
            eval_propensity: model_or(&self.evaluation.propensity, Link::Logit),
            cv: CvPlan {
                folds: self.cv.folds,
                seed: cv_seed,
            },
            rank_by: self.compare.rank_by,
        })
    }

    pub fn candidate_grid(&self, outcome_kind: OutcomeKind) -> Outcome<CandidateGrid> {
        if self.compare.candidates.is_empty() {
            return Err(Failure::validation(
                "the config declares no [[compare.candidates]]; at least one is required",
            ));
        }
        let candidates = self
            .compare
            .candidates
            .iter()
            .map(|c| {
                let defaults = CandidateSpec::defaults(&c.label, outcome_kind);
                let rule_link = defaults.rule_model.link;
                CandidateSpec {
                    label: c.label.clone(),
                    weighting: c.weighting,
                    propensity_numerator: c
                        .numerator
                        .as_ref()
                        .map_or(defaults.propensity_numerator, |m| m.to_spec(Link::Logit)),
                    propensity_denominator: c
                        .denominator
                        .as_ref()
                        .map_or(defaults.propensity_denominator, |m| m.to_spec(Link::Logit)),
                    rule_model: match &c.model {
                        Some(m) => m.to_spec(rule_link),
                        None => defaults.rule_model,
                    },
                    benefit_threshold: c.benefit_threshold,
                }
            })
            .collect();
        Ok(CandidateGrid { candidates })
    }
}

/// Resolve a seed: explicit flag, then config value, then `ITR_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Outcome<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text.trim().parse().map_err(|_| {
            Failure::validation(format!(
                "{SEED_ENV} must be an unsigned integer, got '{text}'"
            ))
        }),
        Err(_) => Ok(0),
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// File to partition with `split`.
    pub input: Option<PathBuf>,
    pub development: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub evaluation: Option<PathBuf>,
}

pub fn require_path(
    flag: Option<PathBuf>,
    config: &Option<PathBuf>,
    what: &str,
) -> Outcome<PathBuf> {
    flag.or_else(|| config.clone()).ok_or_else(|| {
        Failure::validation(format!("no {what} file given (flag or [data] section)"))
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub stratify_by_treatment: bool,
}

fn default_fractions() -> Vec<f64> {
    SplitSpec::default().fractions
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            fractions: default_fractions(),
            seed: None,
            stratify_by_treatment: false,
        }
    }
}

/// One generalized-linear-model declaration. `lambda` may be a number
/// (fixed penalty), an array (cross-validation grid), or absent (default
/// grid from the data's lambda_max).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub link: Option<Link>,
    #[serde(default)]
    pub penalty: Option<Penalty>,
    pub lambda: Option<LambdaField>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaField {
    Fixed(f64),
    Grid(Vec<f64>),
}

impl ModelSection {
    pub fn to_spec(&self, default_link: Link) -> GlmSpec {
        let link = self.link.unwrap_or(default_link);
        match self.penalty.unwrap_or(Penalty::None) {
            Penalty::None => GlmSpec::unpenalized(link),
            penalty => {
                let lambda = match &self.lambda {
                    Some(LambdaField::Fixed(v)) => LambdaChoice::Fixed(*v),
                    Some(LambdaField::Grid(g)) => LambdaChoice::Grid(g.clone()),
                    None => LambdaChoice::DefaultGrid,
                };
                GlmSpec::penalized(link, penalty, lambda)
            }
        }
    }
}

fn model_or(section: &Option<ModelSection>, default_link: Link) -> GlmSpec {
    section.as_ref().map_or_else(
        || GlmSpec::unpenalized(default_link),
        |m| m.to_spec(default_link),
    )
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensitySection {
    pub numerator: Option<ModelSection>,
    pub denominator: Option<ModelSection>,
    #[serde(default)]
    pub truncation: TruncationSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    pub lo: f64,
    pub hi: f64,
}

impl Default for TruncationSection {
    fn default() -> Self {
        let t = Truncation::default();
        TruncationSection { lo: t.lo, hi: t.hi }
    }
}

impl TruncationSection {
    pub fn to_core(&self) -> Outcome<Truncation> {
        Ok(Truncation::new(self.lo, self.hi)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSection {
    pub model: Option<ModelSection>,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
    #[serde(default)]
    pub benefit_threshold: f64,
}

fn default_weighting() -> Weighting {
    Weighting::Stabilized
}

impl Default for RuleSection {
    fn default() -> Self {
        RuleSection {
            model: None,
            weighting: Weighting::Stabilized,
            benefit_threshold: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSection {
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub seed: Option<u64>,
}

fn default_folds() -> usize {
    CvPlan::default().folds
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            folds: default_folds(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub propensity: Option<ModelSection>,
    #[serde(default)]
    pub truncation: TruncationSection,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
}

/// `replicates = 0` disables the bootstrap entirely.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub seed: Option<u64>,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_replicates() -> usize {
    BootstrapSettings::default().replicates
}

fn default_level() -> f64 {
    BootstrapSettings::default().level
}

impl Default for BootstrapSection {
    fn default() -> Self {
        BootstrapSection {
            replicates: default_replicates(),
            seed: None,
            level: default_level(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    #[serde(default)]
    pub rank_by: RankCriterion,
    #[serde(default)]
    pub candidates: Vec<CandidateSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSection {
    pub label: String,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
    pub model: Option<ModelSection>,
    pub numerator: Option<ModelSection>,
    pub denominator: Option<ModelSection>,
    #[serde(default)]
    pub benefit_threshold: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub replications: Option<usize>,
    pub n_eval: Option<usize>,
    pub base_seed: Option<u64>,
    pub benchmark_rows: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    /// Control-arm coefficients (intercept, x, l).
    pub control: Option<[f64; 3]>,
    /// Treated-arm coefficients (intercept, x, l).
    pub treated: Option<[f64; 3]>,
}

impl SimulateSection {
    /// Fold this section over the core defaults; the seed is resolved
    /// separately so flags and the environment participate.
    pub fn to_core(&self, seed: u64) -> SimConfig {
        let defaults = SimConfig::default();
        SimConfig {
            coefficients: SimCoefficients {
                control: self.control.unwrap_or(defaults.coefficients.control),
                treated: self.treated.unwrap_or(defaults.coefficients.treated),
            },
            n_eval: self.n_eval.unwrap_or(defaults.n_eval),
            replications: self.replications.unwrap_or(defaults.replications),
            base_seed: seed,
            benchmark_rows: self.benchmark_rows.unwrap_or(defaults.benchmark_rows),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sizes.clone().unwrap_or_else(|| vec![50, 500, 1000])
    }
}
