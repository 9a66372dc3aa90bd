//! Rule development: fit one outcome model per treatment arm on weighted
//! development data, then recommend treatment wherever the predicted
//! benefit of treating exceeds a threshold.
//!
//! Both arm models share the encoding of the full development data, so a
//! categorical level seen in only one arm still gets a column (with a zero
//! coefficient path through the penalty or a rank error when unpenalized).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{CvPlan, DesignMatrix, FittedGlm, GlmSpec, Link};
use crate::propensity::{
    fit_propensity_pair, stabilized_weights, PropensityPair, Truncation, WeightSummary,
};
use crate::tabular::{encode, encode_with, Dataset, EncodingMap, OutcomeKind, RoleAssignment};
use crate::SCHEMA_VERSION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Ratio-of-propensity observation weights (the default).
    Stabilized,
    /// No confounding adjustment; kept for comparison studies.
    Unweighted,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BuildSettings {
    pub propensity_numerator: GlmSpec,
    pub propensity_denominator: GlmSpec,
    /// Spec for both arm outcome models. The link must match the outcome
    /// kind: logit for binary, identity for continuous.
    pub rule_model: GlmSpec,
    pub truncation: Truncation,
    pub weighting: Weighting,
    /// Treat when the oriented benefit score strictly exceeds this.
    pub benefit_threshold: f64,
    pub cv: CvPlan,
}

impl BuildSettings {
    pub fn defaults_for(outcome_kind: OutcomeKind) -> BuildSettings {
        let rule_link = match outcome_kind {
            OutcomeKind::Binary => Link::Logit,
            OutcomeKind::Continuous => Link::Identity,
        };
        BuildSettings {
            propensity_numerator: GlmSpec::unpenalized(Link::Logit),
            propensity_denominator: GlmSpec::unpenalized(Link::Logit),
            rule_model: GlmSpec::unpenalized(rule_link),
            truncation: Truncation::default(),
            weighting: Weighting::Stabilized,
            benefit_threshold: 0.0,
            cv: CvPlan::default(),
        }
    }
}

/// What the build saw: weights and per-arm fitting facts, for reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BuildDiagnostics {
    pub n_rows: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub weight_summary: Option<WeightSummary>,
    pub warnings: Vec<String>,
}

/// A deployable individualized treatment rule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreatmentRule {
    pub schema_version: u32,
    /// Outcome model for the control arm.
    pub f0: FittedGlm,
    /// Outcome model for the treated arm.
    pub f1: FittedGlm,
    pub rule_inputs: Vec<String>,
    pub encoding: EncodingMap,
    pub outcome_kind: OutcomeKind,
    pub higher_is_better: bool,
    pub benefit_threshold: f64,
    pub weighting: Weighting,
    pub diagnostics: BuildDiagnostics,
}

/// Develop a rule on `data` using the dataset's own missingness weights
/// (when declared) as extra observation weights.
pub fn build_rule(
    data: &Dataset,
    roles: &RoleAssignment,
    settings: &BuildSettings,
) -> Result<(TreatmentRule, Option<PropensityPair>)> {
    let extra = data.extra_weights().map(|w| w.to_vec());
    build_rule_with_weights(data, roles, settings, extra.as_deref())
}

/// Develop a rule with explicit extra observation weights (or none).
pub fn build_rule_with_weights(
    data: &Dataset,
    roles: &RoleAssignment,
    settings: &BuildSettings,
    extra: Option<&[f64]>,
) -> Result<(TreatmentRule, Option<PropensityPair>)> {
    roles.validate_against(data)?;
    let expected_link = match data.meta().outcome_kind {
        OutcomeKind::Binary => Link::Logit,
        OutcomeKind::Continuous => Link::Identity,
    };
    if settings.rule_model.link != expected_link {
        return Err(Error::Config(format!(
            "rule model link {:?} does not match the {:?} outcome",
            settings.rule_model.link,
            data.meta().outcome_kind
        )));
    }
    if !settings.benefit_threshold.is_finite() {
        return Err(Error::Config("benefit threshold must be finite".into()));
    }
    if let Some(e) = extra {
        if e.len() != data.n_rows() {
            return Err(Error::Validation(format!(
                "extra weight vector has {} entries for {} rows",
                e.len(),
                data.n_rows()
            )));
        }
    }

    let (pair, weights) = match settings.weighting {
        Weighting::Stabilized => {
            let pair = fit_propensity_pair(
                data,
                roles,
                &settings.propensity_numerator,
                &settings.propensity_denominator,
                settings.truncation,
                &settings.cv,
            )?;
            let wv = stabilized_weights(&pair, data, extra)?;
            (Some(pair), wv)
        }
        Weighting::Unweighted => {
            let values: Vec<f64> = match extra {
                Some(e) => e.to_vec(),
                None => vec![1.0; data.n_rows()],
            };
            if values.iter().all(|&v| v == 0.0) {
                return Err(Error::Validation("every observation weight is zero".into()));
            }
            let summary = summarize(&values);
            (None, crate::propensity::WeightVector { values, summary })
        }
    };

    let (x_all, encoding) = encode(data, roles.rule_inputs())?;
    let y = data.outcome_values();
    let t = data.treatment_values();
    let control: Vec<usize> = (0..data.n_rows()).filter(|&i| t[i] == 0.0).collect();
    let treated: Vec<usize> = (0..data.n_rows()).filter(|&i| t[i] == 1.0).collect();
    for (label, arm) in [("control", &control), ("treated", &treated)] {
        if arm.is_empty() {
            return Err(Error::Positivity(format!(
                "development data has no {label} rows; both arms are required"
            )));
        }
    }

    let fit_arm = |idx: &[usize]| -> Result<FittedGlm> {
        let x = x_all.select_rows(idx)?;
        let ya: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let wa: Vec<f64> = idx.iter().map(|&i| weights.values[i]).collect();
        crate::propensity::fit_with_cv(&x, &ya, &wa, &settings.rule_model, &settings.cv)
    };
    let f0 = fit_arm(&control)?;
    let f1 = fit_arm(&treated)?;

    let mut warnings = Vec::new();
    for (tag, fit) in [("control model", &f0), ("treated model", &f1)] {
        for w in &fit.warnings {
            warnings.push(format!("{tag}: {w}"));
        }
    }
    if let Some(p) = &pair {
        for (tag, fit) in [
            ("numerator propensity", &p.numerator),
            ("denominator propensity", &p.denominator),
        ] {
            for w in &fit.warnings {
                warnings.push(format!("{tag}: {w}"));
            }
        }
    }

    let rule = TreatmentRule {
        schema_version: SCHEMA_VERSION,
        f0,
        f1,
        rule_inputs: roles.rule_inputs().to_vec(),
        encoding,
        outcome_kind: data.meta().outcome_kind,
        higher_is_better: data.meta().higher_is_better,
        benefit_threshold: settings.benefit_threshold,
        weighting: settings.weighting,
        diagnostics: BuildDiagnostics {
            n_rows: data.n_rows(),
            n_treated: treated.len(),
            n_control: control.len(),
            weight_summary: match settings.weighting {
                Weighting::Stabilized => Some(weights.summary),
                Weighting::Unweighted => None,
            },
            warnings,
        },
    };
    Ok((rule, pair))
}

fn summarize(values: &[f64]) -> WeightSummary {
    let n = values.len();
    WeightSummary {
        n,
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean: values.iter().sum::<f64>() / n as f64,
    }
}

impl TreatmentRule {
    /// Oriented benefit scores on the response scale: positive means the
    /// treated arm's predicted outcome is preferable.
    pub fn scores(&self, data: &Dataset) -> Result<Vec<f64>> {
        let x = encode_with(data, &self.encoding)?;
        self.scores_from_design(&x)
    }

    pub fn scores_from_design(&self, x: &DesignMatrix) -> Result<Vec<f64>> {
        let p0 = self.f0.predict(x)?;
        let p1 = self.f1.predict(x)?;
        let sign = if self.higher_is_better { 1.0 } else { -1.0 };
        Ok(p0.iter().zip(&p1).map(|(a, b)| sign * (b - a)).collect())
    }

    /// 1 = treat, 0 = do not treat. Ties at the threshold do not treat.
    pub fn recommend_from_score(&self, score: f64) -> u8 {
        u8::from(score > self.benefit_threshold)
    }

    pub fn recommendations(&self, data: &Dataset) -> Result<Vec<u8>> {
        Ok(self
            .scores(data)?
            .into_iter()
            .map(|s| self.recommend_from_score(s))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use crate::tabular::{Column, DatasetMeta};
    use rand::Rng;

    fn sim_like(n: usize, seed: u64) -> Dataset {
        let mut rng = seeding::rng(seed);
        let mut x = Vec::new();
        let mut l = Vec::new();
        let mut t = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let xi: f64 = rng.random_range(0.0..2.0);
            let li = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            let ti = if rng.random_bool(if li == 1.0 { 0.25 } else { 0.75 }) {
                1.0
            } else {
                0.0
            };
            let eta = if ti == 1.0 {
                -1.4 + 0.55 * xi + 1.5 * li
            } else {
                -0.55 * xi + 1.5 * li
            };
            let p = 1.0 / (1.0 + (-eta).exp());
            let yi = if rng.random_bool(p) { 1.0 } else { 0.0 };
            x.push(xi);
            l.push(li);
            t.push(ti);
            y.push(yi);
        }
        Dataset::new(
            vec![
                ("y".to_string(), Column::Numeric(y)),
                ("t".to_string(), Column::Numeric(t)),
                ("x".to_string(), Column::Numeric(x)),
                ("l".to_string(), Column::Numeric(l)),
            ],
            DatasetMeta {
                outcome: "y".into(),
                treatment: "t".into(),
                outcome_kind: OutcomeKind::Binary,
                higher_is_better: true,
                missingness_weight_column: None,
            },
        )
        .unwrap()
    }

    fn roles() -> RoleAssignment {
        RoleAssignment::from_parts(vec!["l".into()], vec!["x".into()], None).unwrap()
    }

    #[test]
    fn build_produces_two_arm_models_over_the_same_columns() {
        let data = sim_like(800, 5);
        let settings = BuildSettings::defaults_for(OutcomeKind::Binary);
        let (rule, pair) = build_rule(&data, &roles(), &settings).unwrap();
        assert!(pair.is_some());
        assert_eq!(rule.f0.coefficient_names, rule.f1.coefficient_names);
        assert_eq!(rule.f0.coefficient_names, vec!["intercept", "x"]);
        assert_eq!(rule.diagnostics.n_rows, 800);
        assert_eq!(rule.diagnostics.n_treated + rule.diagnostics.n_control, 800);
        let ws = rule.diagnostics.weight_summary.unwrap();
        assert!(ws.min > 0.0 && ws.max <= 19.0 + 1e-12);
    }

    #[test]
    fn recommendations_are_strict_threshold_crossings() {
        let data = sim_like(600, 8);
        let settings = BuildSettings::defaults_for(OutcomeKind::Binary);
        let (rule, _) = build_rule(&data, &roles(), &settings).unwrap();
        let scores = rule.scores(&data).unwrap();
        let recs = rule.recommendations(&data).unwrap();
        for (s, r) in scores.iter().zip(&recs) {
            assert_eq!(*r, u8::from(*s > rule.benefit_threshold));
        }
        assert_eq!(rule.recommend_from_score(rule.benefit_threshold), 0);
    }

    #[test]
    fn mismatched_rule_link_is_a_config_error() {
        let data = sim_like(100, 3);
        let mut settings = BuildSettings::defaults_for(OutcomeKind::Binary);
        settings.rule_model = GlmSpec::unpenalized(Link::Identity);
        let err = build_rule(&data, &roles(), &settings).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }

    #[test]
    fn unweighted_build_skips_the_propensity_stage() {
        let data = sim_like(400, 12);
        let mut settings = BuildSettings::defaults_for(OutcomeKind::Binary);
        settings.weighting = Weighting::Unweighted;
        let (rule, pair) = build_rule(&data, &roles(), &settings).unwrap();
        assert!(pair.is_none());
        assert!(rule.diagnostics.weight_summary.is_none());
    }

    #[test]
    fn weighted_fit_recovers_the_marginal_benefit_direction() {
        // In this generator treatment helps at large x and hurts at small x;
        // the oriented score must increase with x.
        let data = sim_like(4000, 99);
        let settings = BuildSettings::defaults_for(OutcomeKind::Binary);
        let (rule, _) = build_rule(&data, &roles(), &settings).unwrap();
        let probe = |x: f64| {
            let d = DesignMatrix::from_rows(
                vec!["intercept".into(), "x".into()],
                vec![vec![1.0, x], vec![1.0, x]],
            )
            .unwrap();
            rule.scores_from_design(&d).unwrap()[0]
        };
        assert!(probe(1.9) > probe(0.1));
        assert!(probe(0.05) < 0.0, "treating should look harmful at tiny x");
        assert!(probe(1.95) > 0.0, "treating should look helpful at large x");
    }

    #[test]
    fn rule_json_round_trips() {
        let data = sim_like(300, 21);
        let settings = BuildSettings::defaults_for(OutcomeKind::Binary);
        let (rule, _) = build_rule(&data, &roles(), &settings).unwrap();
        let text = serde_json::to_string(&rule).unwrap();
        let back: TreatmentRule = serde_json::from_str(&text).unwrap();
        assert_eq!(back.schema_version, rule.schema_version);
        assert_eq!(back.f1.coefficients, rule.f1.coefficients);
        let s1 = rule.scores(&data).unwrap();
        let s2 = back.scores(&data).unwrap();
        assert_eq!(s1, s2);
    }
}
