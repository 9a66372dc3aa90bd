//! Observation weights for rule development: the ratio of a numerator
//! propensity (treatment given the rule's inputs) to a denominator
//! propensity (treatment given the rule's inputs and all confounders).
//!
//! Weighting each arm's regression this way makes the fitted arm models
//! approximate what a randomized trial with assignment driven only by the
//! rule's inputs would estimate, while the numerator keeps the weights
//! stabilized near 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{self, CvPlan, FittedGlm, GlmSpec, Link};
use crate::tabular::{encode, Dataset, EncodingMap, RoleAssignment};

/// Closed truncation interval applied to every estimated propensity before
/// any ratio is formed. The default [0.05, 0.95] caps a single stabilized
/// weight at 0.95 / 0.05 = 19.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation { lo: 0.05, hi: 0.95 }
    }
}

impl Truncation {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "truncation bounds must satisfy 0 < lo < hi < 1, got [{lo}, {hi}]"
            )));
        }
        Ok(Truncation { lo, hi })
    }

    pub fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.lo, self.hi)
    }
}

/// Stabilized weight for one observation. Both probabilities are the
/// treated-arm propensities; for a control observation the complements are
/// taken first and each factor is truncated separately, so the ratio is
/// bounded by hi/lo on both arms.
pub fn stabilized_weight(
    numerator: f64,
    denominator: f64,
    treatment: u8,
    trunc: &Truncation,
) -> f64 {
    match treatment {
        1 => trunc.clamp(numerator) / trunc.clamp(denominator),
        _ => trunc.clamp(1.0 - numerator) / trunc.clamp(1.0 - denominator),
    }
}

/// The two fitted propensity models and everything needed to score new rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropensityPair {
    pub numerator: FittedGlm,
    pub denominator: FittedGlm,
    pub numerator_encoding: EncodingMap,
    pub denominator_encoding: EncodingMap,
    pub truncation: Truncation,
}

/// Per-row development weights plus a digest worth reporting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub summary: WeightSummary,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WeightSummary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl WeightSummary {
    fn from_values(values: &[f64]) -> WeightSummary {
        let n = values.len();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / n as f64;
        WeightSummary { n, min, max, mean }
    }
}

/// Fit the numerator (treatment ~ rule inputs) and denominator
/// (treatment ~ rule inputs + confounders) propensity models on the
/// development data. Both are logit fits regardless of the outcome kind;
/// penalized specs resolve their penalty level by cross-validation through
/// `cv` when the model spec asks for it.
pub fn fit_propensity_pair(
    data: &Dataset,
    roles: &RoleAssignment,
    numerator_spec: &GlmSpec,
    denominator_spec: &GlmSpec,
    truncation: Truncation,
    cv: &CvPlan,
) -> Result<PropensityPair> {
    roles.validate_against(data)?;
    for (label, spec) in [
        ("numerator", numerator_spec),
        ("denominator", denominator_spec),
    ] {
        if spec.link != Link::Logit {
            return Err(Error::Config(format!(
                "the {label} propensity model must use the logit link"
            )));
        }
    }
    let t = data.treatment_values();
    let treated = t.iter().filter(|&&v| v == 1.0).count();
    if treated == 0 || treated == t.len() {
        return Err(Error::Positivity(format!(
            "development data has {treated} treated rows out of {}; both arms are required",
            t.len()
        )));
    }
    let w: Vec<f64> = match data.extra_weights() {
        Some(extra) => extra.to_vec(),
        None => vec![1.0; data.n_rows()],
    };

    let (x_num, numerator_encoding) = encode(data, roles.rule_inputs())?;
    let numerator = fit_with_cv(&x_num, t, &w, numerator_spec, cv)?;

    let den_cols = roles.denominator_columns();
    let (x_den, denominator_encoding) = encode(data, &den_cols)?;
    let denominator = fit_with_cv(&x_den, t, &w, denominator_spec, cv)?;

    Ok(PropensityPair {
        numerator,
        denominator,
        numerator_encoding,
        denominator_encoding,
        truncation,
    })
}

pub(crate) fn fit_with_cv(
    x: &glm::DesignMatrix,
    y: &[f64],
    w: &[f64],
    spec: &GlmSpec,
    cv: &CvPlan,
) -> Result<FittedGlm> {
    glm::fit_cv(x, y, w, spec, cv.folds, cv.seed)
}

impl PropensityPair {
    /// Truncated treated-arm propensities from both models for every row.
    pub fn probabilities(&self, data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
        let x_num = crate::tabular::encode_with(data, &self.numerator_encoding)?;
        let x_den = crate::tabular::encode_with(data, &self.denominator_encoding)?;
        Ok((
            self.numerator.predict(&x_num)?,
            self.denominator.predict(&x_den)?,
        ))
    }
}

/// Stabilized weights for every row of `data`, multiplied by the optional
/// per-row `extra` weights (missingness adjustments).
pub fn stabilized_weights(
    pair: &PropensityPair,
    data: &Dataset,
    extra: Option<&[f64]>,
) -> Result<WeightVector> {
    if let Some(e) = extra {
        if e.len() != data.n_rows() {
            return Err(Error::Validation(format!(
                "extra weight vector has {} entries for {} rows",
                e.len(),
                data.n_rows()
            )));
        }
    }
    let (p_num, p_den) = pair.probabilities(data)?;
    let t = data.treatment_values();
    let mut values = Vec::with_capacity(data.n_rows());
    for i in 0..data.n_rows() {
        let arm = if t[i] == 1.0 { 1u8 } else { 0u8 };
        let mut w = stabilized_weight(p_num[i], p_den[i], arm, &pair.truncation);
        if let Some(e) = extra {
            w *= e[i];
        }
        values.push(w);
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Numerical(
            "a stabilized weight is negative or non-finite".into(),
        ));
    }
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::Validation("every stabilized weight is zero".into()));
    }
    let summary = WeightSummary::from_values(&values);
    Ok(WeightVector { values, summary })
}
