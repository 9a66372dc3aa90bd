//! Model selection: build each candidate rule on the development part,
//! score every candidate and the treat-all / treat-none baselines on the
//! validation part, and rank them.
//!
//! Ranking uses point estimates only; the final verdict on the winner
//! belongs to a separate evaluation run on held-out data, which this module
//! deliberately cannot touch (there is no evaluation-set parameter).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{evaluate_recommendations, evaluate_rule, EvalSettings, EvaluationReport};
use crate::glm::{CvPlan, GlmSpec, Link};
use crate::propensity::Truncation;
use crate::rule::{build_rule, BuildSettings, TreatmentRule, Weighting};
use crate::tabular::{Dataset, OutcomeKind, RoleAssignment};
use crate::SCHEMA_VERSION;

pub const TREAT_ALL_LABEL: &str = "treat_all";
pub const TREAT_NONE_LABEL: &str = "treat_none";

/// One (propensity spec x rule spec) combination to try.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub label: String,
    pub weighting: Weighting,
    pub propensity_numerator: GlmSpec,
    pub propensity_denominator: GlmSpec,
    pub rule_model: GlmSpec,
    pub benefit_threshold: f64,
}

impl CandidateSpec {
    pub fn defaults(label: &str, outcome_kind: OutcomeKind) -> CandidateSpec {
        let b = BuildSettings::defaults_for(outcome_kind);
        CandidateSpec {
            label: label.to_string(),
            weighting: b.weighting,
            propensity_numerator: b.propensity_numerator,
            propensity_denominator: b.propensity_denominator,
            rule_model: b.rule_model,
            benefit_threshold: b.benefit_threshold,
        }
    }

    fn build_settings(&self, truncation: Truncation, cv: CvPlan) -> BuildSettings {
        BuildSettings {
            propensity_numerator: self.propensity_numerator.clone(),
            propensity_denominator: self.propensity_denominator.clone(),
            rule_model: self.rule_model.clone(),
            truncation,
            weighting: self.weighting,
            benefit_threshold: self.benefit_threshold,
            cv,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateGrid {
    pub candidates: Vec<CandidateSpec>,
}

impl CandidateGrid {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Config("the candidate grid is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.candidates {
            if c.label.is_empty() {
                return Err(Error::Config("candidate labels must be non-empty".into()));
            }
            if c.label == TREAT_ALL_LABEL || c.label == TREAT_NONE_LABEL {
                return Err(Error::Config(format!(
                    "label '{}' is reserved for the baseline",
                    c.label
                )));
            }
            if !seen.insert(c.label.clone()) {
                return Err(Error::Config(format!(
                    "duplicate candidate label '{}'",
                    c.label
                )));
            }
        }
        Ok(())
    }
}

/// What to rank candidates by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankCriterion {
    #[default]
    Abr,
    AtePositive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareSettings {
    pub truncation: Truncation,
    pub eval_propensity: GlmSpec,
    pub cv: CvPlan,
    pub rank_by: RankCriterion,
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings {
            truncation: Truncation::default(),
            eval_propensity: GlmSpec::unpenalized(Link::Logit),
            cv: CvPlan::default(),
            rank_by: RankCriterion::Abr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum CandidateStatus {
    Ok,
    Failed { message: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub label: String,
    pub is_baseline: bool,
    pub status: CandidateStatus,
    pub rank: usize,
    pub n_positive: Option<usize>,
    pub n_negative: Option<usize>,
    pub ate_positive: Option<f64>,
    pub ate_negative: Option<f64>,
    pub abr: Option<f64>,
    /// Strictly better than the best baseline under the ranking criterion.
    pub exceeds_best_baseline: bool,
    /// The recommended-treat subgroup shows no benefit (oriented effect
    /// at or below zero, or nobody recommended).
    pub no_identified_benefit: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub rank_by: RankCriterion,
    /// Ranked best-first; rank 1 is the selection.
    pub entries: Vec<ValidationEntry>,
    pub selected: String,
}

struct Scored {
    label: String,
    is_baseline: bool,
    status: CandidateStatus,
    report: Option<EvaluationReport>,
}

/// Build every candidate on `dev`, score candidates and baselines on `val`
/// by point estimates, and rank. Build failures demote a candidate to the
/// bottom with its error message instead of aborting the run.
pub fn compare_on_validation(
    dev: &Dataset,
    val: &Dataset,
    roles: &RoleAssignment,
    grid: &CandidateGrid,
    settings: &CompareSettings,
) -> Result<(ValidationReport, Vec<(String, TreatmentRule)>)> {
    grid.validate()?;
    roles.validate_against(dev)?;
    let eval_settings = EvalSettings {
        propensity: settings.eval_propensity.clone(),
        truncation: settings.truncation,
        bootstrap: None,
        cv: settings.cv,
    };

    let built: Vec<(String, std::result::Result<TreatmentRule, String>)> = grid
        .candidates
        .par_iter()
        .map(|cand| {
            let bs = cand.build_settings(settings.truncation, settings.cv);
            let outcome = build_rule(dev, roles, &bs)
                .map(|(rule, _)| rule)
                .map_err(|e| e.to_string());
            (cand.label.clone(), outcome)
        })
        .collect();

    let mut scored: Vec<Scored> = Vec::new();
    let mut rules: Vec<(String, TreatmentRule)> = Vec::new();
    for (label, outcome) in built {
        match outcome {
            Ok(rule) => match evaluate_rule(&rule, val, roles, &eval_settings) {
                Ok(report) => {
                    scored.push(Scored {
                        label: label.clone(),
                        is_baseline: false,
                        status: CandidateStatus::Ok,
                        report: Some(report),
                    });
                    rules.push((label, rule));
                }
                Err(e) => scored.push(Scored {
                    label,
                    is_baseline: false,
                    status: CandidateStatus::Failed {
                        message: e.to_string(),
                    },
                    report: None,
                }),
            },
            Err(message) => scored.push(Scored {
                label,
                is_baseline: false,
                status: CandidateStatus::Failed { message },
                report: None,
            }),
        }
    }

    for (label, rec) in [
        (TREAT_ALL_LABEL, vec![1u8; val.n_rows()]),
        (TREAT_NONE_LABEL, vec![0u8; val.n_rows()]),
    ] {
        let report = evaluate_recommendations(val, &rec, roles.eval_confounders(), &eval_settings)?;
        scored.push(Scored {
            label: label.to_string(),
            is_baseline: true,
            status: CandidateStatus::Ok,
            report: Some(report),
        });
    }

    // Larger oriented values are better; raw estimates stay on the outcome
    // scale in the report.
    let sign = if dev.meta().higher_is_better {
        1.0
    } else {
        -1.0
    };
    let criterion = |s: &Scored| -> Option<f64> {
        let report = s.report.as_ref()?;
        match settings.rank_by {
            RankCriterion::Abr => Some(sign * report.abr.point),
            RankCriterion::AtePositive => report.ate_positive.map(|e| sign * e.point),
        }
    };

    let best_baseline = scored
        .iter()
        .filter(|s| s.is_baseline)
        .filter_map(&criterion)
        .fold(f64::NEG_INFINITY, f64::max);

    scored.sort_by(|a, b| {
        let ka = criterion(a);
        let kb = criterion(b);
        match (ka, kb) {
            (Some(x), Some(y)) => y.partial_cmp(&x).unwrap().then(a.label.cmp(&b.label)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.label.cmp(&b.label),
        }
    });

    let entries: Vec<ValidationEntry> = scored
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let value = criterion(s);
            let report = s.report.as_ref();
            let oriented_ate_pos = report.and_then(|r| r.ate_positive.map(|e| sign * e.point));
            ValidationEntry {
                label: s.label.clone(),
                is_baseline: s.is_baseline,
                status: s.status.clone(),
                rank: i + 1,
                n_positive: report.map(|r| r.n_positive),
                n_negative: report.map(|r| r.n_negative),
                ate_positive: report.and_then(|r| r.ate_positive.map(|e| e.point)),
                ate_negative: report.and_then(|r| r.ate_negative.map(|e| e.point)),
                abr: report.map(|r| r.abr.point),
                exceeds_best_baseline: !s.is_baseline
                    && value.map(|v| v > best_baseline).unwrap_or(false),
                no_identified_benefit: report
                    .map(|_| oriented_ate_pos.map(|v| v <= 0.0).unwrap_or(true))
                    .unwrap_or(false),
            }
        })
        .collect();

    let selected = entries[0].label.clone();
    Ok((
        ValidationReport {
            schema_version: SCHEMA_VERSION,
            rank_by: settings.rank_by,
            entries,
            selected,
        },
        rules,
    ))
}
