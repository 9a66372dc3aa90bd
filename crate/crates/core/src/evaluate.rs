//! Rule evaluation on independent data: IPW treatment-effect estimates
//! inside the recommended-treat and recommended-no-treat subgroups, their
//! size-weighted combination (the average benefit of the rule), and
//! percentile bootstrap confidence intervals.
//!
//! The evaluation propensity is a single logit model of treatment on the
//! evaluation confounders, truncated before use. Bootstrap replicates
//! resample whole rows and refit that model; a resample in which some
//! non-empty subgroup carries only one treatment arm is redrawn, and
//! discarded after too many attempts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{self, DesignMatrix, FittedGlm, GlmSpec, LambdaChoice, Link};
use crate::propensity::Truncation;
use crate::rule::TreatmentRule;
use crate::seeding;
use crate::tabular::{encode, Dataset, RoleAssignment};
use crate::SCHEMA_VERSION;

/// Attempts allowed per bootstrap replicate before it is discarded.
const MAX_REDRAWS: usize = 100;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub seed: u64,
    /// Two-sided confidence level for the percentile intervals.
    pub level: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            replicates: 1000,
            seed: 0,
            level: 0.95,
        }
    }
}

impl BootstrapSettings {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config(
                "bootstrap needs at least one replicate".into(),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "confidence level must lie in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Evaluation propensity model; must use the logit link.
    pub propensity: GlmSpec,
    pub truncation: Truncation,
    /// `None` skips the bootstrap and reports point estimates only.
    pub bootstrap: Option<BootstrapSettings>,
    pub cv: crate::glm::CvPlan,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            propensity: GlmSpec::unpenalized(Link::Logit),
            truncation: Truncation::default(),
            bootstrap: Some(BootstrapSettings::default()),
            cv: crate::glm::CvPlan::default(),
        }
    }
}

/// A point estimate with optional percentile bounds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

impl Estimate {
    fn point_only(point: f64) -> Estimate {
        Estimate {
            point,
            ci_lower: None,
            ci_upper: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub completed: usize,
    pub discarded: usize,
    pub redraws: usize,
    pub seed: u64,
    pub level: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub n_rows: usize,
    /// Rows the rule recommends to treat.
    pub n_positive: usize,
    /// Rows the rule recommends not to treat.
    pub n_negative: usize,
    /// Null when nobody is recommended to treat.
    pub ate_positive: Option<Estimate>,
    /// Null when everybody is recommended to treat.
    pub ate_negative: Option<Estimate>,
    pub abr: Estimate,
    pub bootstrap: Option<BootstrapSummary>,
    pub warnings: Vec<String>,
}

/// IPW average treatment effect over the rows given (a pre-gathered
/// subgroup): mean of t·y/p minus mean of (1-t)·y/(1-p), with optional
/// extra weights multiplying every summand and the normalizer. Returns
/// `None` for an empty subgroup (or zero total weight).
pub fn ipw_ate(y: &[f64], t: &[f64], p: &[f64], extra: Option<&[f64]>) -> Option<f64> {
    let n = y.len();
    debug_assert_eq!(t.len(), n);
    debug_assert_eq!(p.len(), n);
    if let Some(e) = extra {
        debug_assert_eq!(e.len(), n);
    }
    let mut mass = 0.0;
    let mut treated = 0.0;
    let mut control = 0.0;
    for i in 0..n {
        let e = extra.map(|e| e[i]).unwrap_or(1.0);
        mass += e;
        if t[i] == 1.0 {
            treated += e * y[i] / p[i];
        } else {
            control += e * y[i] / (1.0 - p[i]);
        }
    }
    if mass == 0.0 {
        return None;
    }
    Some((treated - control) / mass)
}

/// Average benefit of the rule: the subgroup-size-weighted mix of the
/// effect of treating the recommended and of withholding from the rest.
/// Degenerate subgroups drop out; both empty gives `None`.
pub fn abr(
    n_positive: usize,
    n_negative: usize,
    ate_positive: Option<f64>,
    ate_negative: Option<f64>,
) -> Option<f64> {
    let np = n_positive as f64;
    let nn = n_negative as f64;
    match (n_positive, n_negative) {
        (0, 0) => None,
        (0, _) => ate_negative.map(|a| -a),
        (_, 0) => ate_positive,
        _ => match (ate_positive, ate_negative) {
            (Some(ap), Some(an)) => Some((np * ap + nn * (-an)) / (np + nn)),
            _ => None,
        },
    }
}

struct Gathered {
    y: Vec<f64>,
    t: Vec<f64>,
    p: Vec<f64>,
    e: Option<Vec<f64>>,
}

fn gather(idx: &[usize], y: &[f64], t: &[f64], p: &[f64], e: Option<&[f64]>) -> Gathered {
    Gathered {
        y: idx.iter().map(|&i| y[i]).collect(),
        t: idx.iter().map(|&i| t[i]).collect(),
        p: idx.iter().map(|&i| p[i]).collect(),
        e: e.map(|e| idx.iter().map(|&i| e[i]).collect()),
    }
}

fn subgroup_ate(g: &Gathered) -> Option<f64> {
    ipw_ate(&g.y, &g.t, &g.p, g.e.as_deref())
}

/// True when a non-empty subgroup has no weight on one of the arms, which
/// leaves its IPW estimate one-sided.
fn one_sided(g: &Gathered) -> bool {
    if g.y.is_empty() {
        return false;
    }
    let mut mass_t = 0.0;
    let mut mass_c = 0.0;
    for i in 0..g.y.len() {
        let e = g.e.as_ref().map(|e| e[i]).unwrap_or(1.0);
        if g.t[i] == 1.0 {
            mass_t += e;
        } else {
            mass_c += e;
        }
    }
    mass_t == 0.0 || mass_c == 0.0
}

/// Evaluate a fitted rule on independent data, orchestrating
/// recommendation, propensity fitting, and the bootstrap.
pub fn evaluate_rule(
    rule: &TreatmentRule,
    data: &Dataset,
    roles: &RoleAssignment,
    settings: &EvalSettings,
) -> Result<EvaluationReport> {
    let recommendations = rule.recommendations(data)?;
    evaluate_recommendations(data, &recommendations, roles.eval_confounders(), settings)
}

/// Evaluate an arbitrary 0/1 recommendation vector (baselines included)
/// against the data's outcomes under IPW with a freshly fitted evaluation
/// propensity model.
pub fn evaluate_recommendations(
    data: &Dataset,
    recommendations: &[u8],
    eval_confounders: &[String],
    settings: &EvalSettings,
) -> Result<EvaluationReport> {
    if recommendations.len() != data.n_rows() {
        return Err(Error::Validation(format!(
            "{} recommendations for {} rows",
            recommendations.len(),
            data.n_rows()
        )));
    }
    if recommendations.iter().any(|r| *r > 1) {
        return Err(Error::Validation("recommendations must be 0 or 1".into()));
    }
    if settings.propensity.link != Link::Logit {
        return Err(Error::Config(
            "the evaluation propensity model must use the logit link".into(),
        ));
    }
    if let Some(b) = &settings.bootstrap {
        b.validate()?;
    }

    let t = data.treatment_values();
    let y = data.outcome_values();
    let extra = data.extra_weights().map(|w| w.to_vec());
    let n = data.n_rows();
    let treated = t.iter().filter(|&&v| v == 1.0).count();
    if treated == 0 || treated == n {
        return Err(Error::Positivity(format!(
            "evaluation data has {treated} treated rows out of {n}; both arms are required"
        )));
    }

    let (x, _encoding) = encode(data, eval_confounders)?;
    let w_fit: Vec<f64> = extra.clone().unwrap_or_else(|| vec![1.0; n]);
    let propensity = glm::fit_cv(
        &x,
        t,
        &w_fit,
        &settings.propensity,
        settings.cv.folds,
        settings.cv.seed,
    )?;
    let p: Vec<f64> = propensity
        .predict(&x)?
        .into_iter()
        .map(|v| settings.truncation.clamp(v))
        .collect();

    let pos: Vec<usize> = (0..n).filter(|&i| recommendations[i] == 1).collect();
    let neg: Vec<usize> = (0..n).filter(|&i| recommendations[i] == 0).collect();
    let g_pos = gather(&pos, y, t, &p, extra.as_deref());
    let g_neg = gather(&neg, y, t, &p, extra.as_deref());
    let ate_pos = subgroup_ate(&g_pos);
    let ate_neg = subgroup_ate(&g_neg);
    let abr_point = abr(pos.len(), neg.len(), ate_pos, ate_neg).ok_or_else(|| {
        Error::Numerical(
            "the average benefit is undefined; a non-empty subgroup carries zero total weight"
                .into(),
        )
    })?;

    let mut warnings = Vec::new();
    if one_sided(&g_pos) {
        warnings.push("the recommended-treat subgroup holds only one treatment arm; its effect estimate is one-sided".into());
    }
    if one_sided(&g_neg) {
        warnings.push("the recommended-no-treat subgroup holds only one treatment arm; its effect estimate is one-sided".into());
    }

    let mut report = EvaluationReport {
        schema_version: SCHEMA_VERSION,
        n_rows: n,
        n_positive: pos.len(),
        n_negative: neg.len(),
        ate_positive: ate_pos.map(Estimate::point_only),
        ate_negative: ate_neg.map(Estimate::point_only),
        abr: Estimate::point_only(abr_point),
        bootstrap: None,
        warnings,
    };

    if let Some(bs) = &settings.bootstrap {
        // The penalty level resolved on the full data is reused inside
        // every resample; only the coefficients are refitted.
        let mut rep_spec = settings.propensity.clone();
        rep_spec.lambda = LambdaChoice::Fixed(propensity.lambda);
        run_bootstrap(
            &mut report,
            bs,
            &x,
            y,
            t,
            recommendations,
            extra.as_deref(),
            &rep_spec,
            settings.truncation,
        );
    }

    Ok(report)
}

struct ReplicateOutcome {
    ate_pos: Option<f64>,
    ate_neg: Option<f64>,
    abr: Option<f64>,
    redraws: usize,
    discarded: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_bootstrap(
    report: &mut EvaluationReport,
    bs: &BootstrapSettings,
    x: &DesignMatrix,
    y: &[f64],
    t: &[f64],
    rec: &[u8],
    extra: Option<&[f64]>,
    spec: &GlmSpec,
    trunc: Truncation,
) {
    let n = y.len();
    let outcomes: Vec<ReplicateOutcome> = (0..bs.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = seeding::derive(bs.seed, &format!("replicate-{r}"));
            one_replicate(seed, n, x, y, t, rec, extra, spec, trunc)
        })
        .collect();

    let discarded = outcomes.iter().filter(|o| o.discarded).count();
    let redraws = outcomes.iter().map(|o| o.redraws).sum();
    let summary = BootstrapSummary {
        replicates: bs.replicates,
        completed: bs.replicates - discarded,
        discarded,
        redraws,
        seed: bs.seed,
        level: bs.level,
    };
    if discarded * 2 > bs.replicates {
        report.warnings.push(format!(
            "{discarded} of {} bootstrap replicates were discarded as degenerate",
            bs.replicates
        ));
    }

    let alpha = 1.0 - bs.level;
    let attach = |est: &mut Estimate, samples: Vec<f64>| {
        if samples.len() < 2 {
            return;
        }
        let mut s = samples;
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = percentile(&s, alpha / 2.0);
        let hi = percentile(&s, 1.0 - alpha / 2.0);
        // Percentile intervals are widened to cover the point estimate so
        // the reported triple is always ordered.
        est.ci_lower = Some(lo.min(est.point));
        est.ci_upper = Some(hi.max(est.point));
    };

    if let Some(est) = report.ate_positive.as_mut() {
        attach(est, outcomes.iter().filter_map(|o| o.ate_pos).collect());
    }
    if let Some(est) = report.ate_negative.as_mut() {
        attach(est, outcomes.iter().filter_map(|o| o.ate_neg).collect());
    }
    attach(
        &mut report.abr,
        outcomes.iter().filter_map(|o| o.abr).collect(),
    );
    report.bootstrap = Some(summary);
}

/// Nearest-rank percentile of an ascending-sorted sample.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let rank = (q * m as f64).ceil() as usize;
    sorted[rank.clamp(1, m) - 1]
}

#[allow(clippy::too_many_arguments)]
fn one_replicate(
    seed: u64,
    n: usize,
    x: &DesignMatrix,
    y: &[f64],
    t: &[f64],
    rec: &[u8],
    extra: Option<&[f64]>,
    spec: &GlmSpec,
    trunc: Truncation,
) -> ReplicateOutcome {
    let mut rng = seeding::rng(seed);
    let mut redraws = 0usize;
    for _attempt in 0..MAX_REDRAWS {
        let idx: Vec<usize> = (0..n)
            .map(|_| rand::Rng::random_range(&mut rng, 0..n))
            .collect();
        if degenerate(&idx, t, rec, extra) {
            redraws += 1;
            continue;
        }
        let xb = match x.select_rows(&idx) {
            Ok(m) => m,
            Err(_) => {
                redraws += 1;
                continue;
            }
        };
        let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let tb: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        let eb: Option<Vec<f64>> = extra.map(|e| idx.iter().map(|&i| e[i]).collect());
        let wb: Vec<f64> = eb.clone().unwrap_or_else(|| vec![1.0; n]);
        let fit: FittedGlm = match glm::fit(&xb, &tb, &wb, spec) {
            Ok(f) => f,
            Err(_) => {
                // Treated like a degenerate draw: the resample happened to
                // make the propensity model unfittable.
                redraws += 1;
                continue;
            }
        };
        let pb: Vec<f64> = match fit.predict(&xb) {
            Ok(p) => p.into_iter().map(|v| trunc.clamp(v)).collect(),
            Err(_) => {
                redraws += 1;
                continue;
            }
        };
        let pos: Vec<usize> = (0..n).filter(|&j| rec[idx[j]] == 1).collect();
        let neg: Vec<usize> = (0..n).filter(|&j| rec[idx[j]] == 0).collect();
        let g_pos = gather(&pos, &yb, &tb, &pb, eb.as_deref());
        let g_neg = gather(&neg, &yb, &tb, &pb, eb.as_deref());
        let ate_pos = subgroup_ate(&g_pos);
        let ate_neg = subgroup_ate(&g_neg);
        let abr_b = abr(pos.len(), neg.len(), ate_pos, ate_neg);
        return ReplicateOutcome {
            ate_pos,
            ate_neg,
            abr: abr_b,
            redraws,
            discarded: false,
        };
    }
    ReplicateOutcome {
        ate_pos: None,
        ate_neg: None,
        abr: None,
        redraws,
        discarded: true,
    }
}

/// A resample is degenerate when some non-empty subgroup puts zero weight
/// on one treatment arm, leaving Eq.-style sums one-sided.
fn degenerate(idx: &[usize], t: &[f64], rec: &[u8], extra: Option<&[f64]>) -> bool {
    // masses[subgroup][arm]
    let mut masses = [[0.0f64; 2]; 2];
    let mut counts = [0usize; 2];
    for &i in idx {
        let s = rec[i] as usize;
        let arm = if t[i] == 1.0 { 1 } else { 0 };
        let e = extra.map(|e| e[i]).unwrap_or(1.0);
        masses[s][arm] += e;
        counts[s] += 1;
    }
    for s in 0..2 {
        if counts[s] > 0 && (masses[s][0] == 0.0 || masses[s][1] == 0.0) {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use crate::tabular::{Column, DatasetMeta, OutcomeKind};
    use rand::Rng;

    fn randomized(n: usize, seed: u64, effect: f64) -> Dataset {
        let mut rng = seeding::rng(seed);
        let mut l = Vec::new();
        let mut t = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let li = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            let ti = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            let p = 0.35 + 0.1 * li + effect * ti;
            let yi = if rng.random_bool(p.clamp(0.01, 0.99)) {
                1.0
            } else {
                0.0
            };
            l.push(li);
            t.push(ti);
            y.push(yi);
        }
        Dataset::new(
            vec![
                ("y".to_string(), Column::Numeric(y)),
                ("t".to_string(), Column::Numeric(t)),
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

    fn no_bootstrap() -> EvalSettings {
        EvalSettings {
            bootstrap: None,
            ..EvalSettings::default()
        }
    }

    #[test]
    fn treat_all_on_a_big_randomized_fixture_recovers_the_true_ate() {
        let data = randomized(50_000, 1, 0.2);
        let rec = vec![1u8; 50_000];
        let report =
            evaluate_recommendations(&data, &rec, &["l".to_string()], &no_bootstrap()).unwrap();
        assert_eq!(report.n_positive, 50_000);
        assert_eq!(report.n_negative, 0);
        assert!(report.ate_negative.is_none());
        let ate = report.ate_positive.unwrap().point;
        assert!((ate - 0.2).abs() < 0.01, "ATE {ate} should be near 0.2");
        assert_eq!(report.abr.point, ate);
    }

    #[test]
    fn treat_none_reports_null_ate_positive_and_flipped_abr() {
        let data = randomized(2000, 2, 0.2);
        let rec = vec![0u8; 2000];
        let report =
            evaluate_recommendations(&data, &rec, &["l".to_string()], &no_bootstrap()).unwrap();
        assert!(report.ate_positive.is_none());
        let ate_neg = report.ate_negative.unwrap().point;
        assert_eq!(report.abr.point, -ate_neg);
    }

    #[test]
    fn abr_recomposes_from_reported_pieces() {
        let data = randomized(3000, 3, 0.15);
        let mut rng = seeding::rng(9);
        let rec: Vec<u8> = (0..3000).map(|_| u8::from(rng.random_bool(0.6))).collect();
        let report =
            evaluate_recommendations(&data, &rec, &["l".to_string()], &no_bootstrap()).unwrap();
        let again = abr(
            report.n_positive,
            report.n_negative,
            report.ate_positive.map(|e| e.point),
            report.ate_negative.map(|e| e.point),
        )
        .unwrap();
        assert!((again - report.abr.point).abs() < 1e-12);
        assert_eq!(report.n_positive + report.n_negative, report.n_rows);
    }

    #[test]
    fn bootstrap_is_deterministic_and_seed_sensitive() {
        let data = randomized(400, 4, 0.25);
        let mut rng = seeding::rng(10);
        let rec: Vec<u8> = (0..400).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let settings = |seed| EvalSettings {
            bootstrap: Some(BootstrapSettings {
                replicates: 80,
                seed,
                level: 0.95,
            }),
            ..EvalSettings::default()
        };
        let a = evaluate_recommendations(&data, &rec, &["l".to_string()], &settings(7)).unwrap();
        let b = evaluate_recommendations(&data, &rec, &["l".to_string()], &settings(7)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = evaluate_recommendations(&data, &rec, &["l".to_string()], &settings(8)).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
        let est = a.abr;
        let (lo, hi) = (est.ci_lower.unwrap(), est.ci_upper.unwrap());
        assert!(lo <= est.point && est.point <= hi);
        let bsum = a.bootstrap.unwrap();
        assert_eq!(bsum.completed + bsum.discarded, 80);
    }

    #[test]
    fn ci_tightens_with_sample_size() {
        let settings = EvalSettings {
            bootstrap: Some(BootstrapSettings {
                replicates: 120,
                seed: 3,
                level: 0.95,
            }),
            ..EvalSettings::default()
        };
        let width = |n: usize| {
            let data = randomized(n, 77, 0.2);
            let rec = vec![1u8; n];
            let report =
                evaluate_recommendations(&data, &rec, &["l".to_string()], &settings).unwrap();
            let est = report.ate_positive.unwrap();
            est.ci_upper.unwrap() - est.ci_lower.unwrap()
        };
        assert!(width(4000) < width(250));
    }

    #[test]
    fn single_arm_evaluation_data_is_a_positivity_error() {
        let data = randomized(200, 5, 0.2);
        let treated = data.arm_indices(1);
        let only = data.subset(&treated).unwrap();
        let rec = vec![1u8; only.n_rows()];
        let err =
            evaluate_recommendations(&only, &rec, &["l".to_string()], &no_bootstrap()).unwrap_err();
        assert!(matches!(err, Error::Positivity(_)), "{err:?}");
    }

    #[test]
    fn one_sided_subgroups_warn_but_still_report() {
        // Recommendation exactly equal to received treatment: each subgroup
        // holds a single arm.
        let data = randomized(300, 6, 0.2);
        let rec: Vec<u8> = data.treatment_values().iter().map(|&t| t as u8).collect();
        let report =
            evaluate_recommendations(&data, &rec, &["l".to_string()], &no_bootstrap()).unwrap();
        assert_eq!(report.warnings.len(), 2, "{:?}", report.warnings);
    }

    #[test]
    fn extra_weights_shift_the_estimate() {
        let base = randomized(1000, 11, 0.2);
        let mut columns: Vec<(String, Column)> = Vec::new();
        for name in ["y", "t", "l"] {
            columns.push((name.to_string(), base.column(name).unwrap().clone()));
        }
        let w: Vec<f64> = (0..1000)
            .map(|i| if i % 2 == 0 { 2.0 } else { 0.5 })
            .collect();
        columns.push(("mw".to_string(), Column::Numeric(w)));
        let meta = DatasetMeta {
            missingness_weight_column: Some("mw".into()),
            ..base.meta().clone()
        };
        let weighted = Dataset::new(columns, meta).unwrap();
        let rec = vec![1u8; 1000];
        let a = evaluate_recommendations(&base, &rec, &["l".to_string()], &no_bootstrap()).unwrap();
        let b =
            evaluate_recommendations(&weighted, &rec, &["l".to_string()], &no_bootstrap()).unwrap();
        assert_ne!(a.ate_positive.unwrap().point, b.ate_positive.unwrap().point);
    }
}
