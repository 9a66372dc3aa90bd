//! Synthetic study: a three-covariate generator with confounded treatment
//! assignment, closed-form benchmark policies, and a replication engine
//! that measures how well developed rules approach the optimal policy.
//!
//! Generator, per row: x ~ Uniform(0,2), l ~ Bernoulli(0.5),
//! g ~ Normal(0,1), t | l ~ Bernoulli(0.75 - 0.5 l), and
//! y ~ Bernoulli(expit(b0_t + b1_t x + gamma_t l)). Only l confounds; g is
//! pure noise available to the rule; larger y is better.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::expit;
use crate::rule::{build_rule, BuildSettings, TreatmentRule, Weighting};
use crate::seeding;
use crate::tabular::{Column, DataSchema, Dataset, OutcomeKind, RoleAssignment};

/// Outcome-model coefficients (intercept, x, l) per treatment arm.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimCoefficients {
    pub control: [f64; 3],
    pub treated: [f64; 3],
}

impl Default for SimCoefficients {
    fn default() -> Self {
        SimCoefficients {
            control: [0.0, -0.55, 1.5],
            treated: [-1.4, 0.55, 1.5],
        }
    }
}

impl SimCoefficients {
    /// True response probability for a covariate profile under an arm.
    pub fn probability(&self, x: f64, l: f64, arm: u8) -> f64 {
        let c = if arm == 1 {
            &self.treated
        } else {
            &self.control
        };
        expit(c[0] + c[1] * x + c[2] * l)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub coefficients: SimCoefficients,
    /// Rows in each per-replication evaluation population.
    pub n_eval: usize,
    pub replications: usize,
    pub base_seed: u64,
    /// Rows behind the closed-form benchmark estimates.
    pub benchmark_rows: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            coefficients: SimCoefficients::default(),
            n_eval: 10_000,
            replications: 200,
            base_seed: 0,
            benchmark_rows: 1_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_eval < 2 || self.replications == 0 || self.benchmark_rows < 2 {
            return Err(Error::Config(
                "simulation sizes and replication counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Schema of generated data: l confounds treatment, the rule sees x and g.
pub fn sim_schema() -> DataSchema {
    DataSchema {
        outcome: "y".into(),
        treatment: "t".into(),
        outcome_kind: OutcomeKind::Binary,
        higher_is_better: true,
        names_influencing_treatment: vec!["l".into()],
        names_influencing_rule: vec!["x".into(), "g".into()],
        names_influencing_treatment_eval: None,
        missingness_weight_column: None,
        categorical_columns: vec![],
    }
}

pub fn sim_roles() -> RoleAssignment {
    RoleAssignment::from_parts(vec!["l".into()], vec!["x".into(), "g".into()], None)
        .expect("static role lists")
}

/// Draw a development dataset of `n` rows.
pub fn generate(n: usize, coefficients: &SimCoefficients, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config(format!("cannot generate {n} rows")));
    }
    let mut rng = seeding::rng(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.random_range(0.0..2.0);
        let li = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let gi = normal.sample(&mut rng);
        let p_treat = if li == 1.0 { 0.25 } else { 0.75 };
        let ti = if rng.random_bool(p_treat) { 1.0 } else { 0.0 };
        let p_y = coefficients.probability(xi, li, ti as u8);
        let yi = if rng.random_bool(p_y) { 1.0 } else { 0.0 };
        x.push(xi);
        l.push(li);
        g.push(gi);
        t.push(ti);
        y.push(yi);
    }
    Dataset::new(
        vec![
            ("y".to_string(), Column::Numeric(y)),
            ("t".to_string(), Column::Numeric(t)),
            ("x".to_string(), Column::Numeric(x)),
            ("l".to_string(), Column::Numeric(l)),
            ("g".to_string(), Column::Numeric(g)),
        ],
        sim_schema().meta(),
    )
}

/// A policy assigning treatment from covariates.
pub enum SimPolicy<'a> {
    TreatAll,
    TreatNone,
    /// Pointwise argmax of the true response probabilities (ties keep
    /// control), which this generator reduces to a threshold in x.
    Optimal,
    Rule(&'a TreatmentRule),
}

/// Mean *true* response probability under the policy over a freshly drawn
/// population of (x, l, g) profiles. Averaging probabilities rather than
/// realized outcomes removes the Bernoulli noise from the comparison.
pub fn true_mean_outcome(
    policy: &SimPolicy,
    coefficients: &SimCoefficients,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::Config(format!(
            "population of {n} rows is too small"
        )));
    }
    let mut rng = seeding::rng(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for _ in 0..n {
        x.push(rng.random_range(0.0..2.0));
        l.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        g.push(normal.sample(&mut rng));
    }
    let assignments: Vec<u8> = match policy {
        SimPolicy::TreatAll => vec![1; n],
        SimPolicy::TreatNone => vec![0; n],
        SimPolicy::Optimal => (0..n)
            .map(|i| {
                let p1 = coefficients.probability(x[i], l[i], 1);
                let p0 = coefficients.probability(x[i], l[i], 0);
                u8::from(p1 > p0)
            })
            .collect(),
        SimPolicy::Rule(rule) => {
            let data = Dataset::new(
                vec![
                    ("y".to_string(), Column::Numeric(vec![0.0; n])),
                    ("t".to_string(), Column::Numeric(vec![0.0; n])),
                    ("x".to_string(), Column::Numeric(x.clone())),
                    ("l".to_string(), Column::Numeric(l.clone())),
                    ("g".to_string(), Column::Numeric(g.clone())),
                ],
                sim_schema().meta(),
            )?;
            rule.recommendations(&data)?
        }
    };
    let total: f64 = (0..n)
        .map(|i| coefficients.probability(x[i], l[i], assignments[i]))
        .sum();
    Ok(total / n as f64)
}

/// Mean true outcome of each closed-form policy, from one shared population.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Benchmarks {
    pub treat_none: f64,
    pub treat_all: f64,
    pub optimal: f64,
    pub rows: usize,
}

pub fn benchmarks(coefficients: &SimCoefficients, n: usize, seed: u64) -> Result<Benchmarks> {
    if n < 2 {
        return Err(Error::Config(format!(
            "population of {n} rows is too small"
        )));
    }
    let mut rng = seeding::rng(seed);
    let mut none = 0.0;
    let mut all = 0.0;
    let mut best = 0.0;
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..2.0);
        let l = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let p0 = coefficients.probability(x, l, 0);
        let p1 = coefficients.probability(x, l, 1);
        none += p0;
        all += p1;
        best += if p1 > p0 { p1 } else { p0 };
    }
    let n_f = n as f64;
    Ok(Benchmarks {
        treat_none: none / n_f,
        treat_all: all / n_f,
        optimal: best / n_f,
        rows: n,
    })
}

/// Rule-development method under study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Stabilized ratio-of-propensity weights (the recommended approach).
    Weighted,
    /// No weighting; ignores confounding when fitting the arm models.
    Naive,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Weighted => "weighted",
            Method::Naive => "naive",
        }
    }
}

/// Replication-averaged performance of one method at one development size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyCell {
    pub method: String,
    pub n_dev: usize,
    pub replications: usize,
    pub failures: usize,
    /// Mean over replications of the rule's true mean outcome.
    pub mean_outcome: f64,
    /// Sample standard deviation over replications.
    pub sd_outcome: f64,
    /// Mean decision threshold in x implied by the fitted arm models,
    /// over replications where the models cross.
    pub mean_threshold: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyGrid {
    pub config: SimConfig,
    pub sizes: Vec<usize>,
    pub methods: Vec<String>,
    pub cells: Vec<StudyCell>,
    pub benchmarks: Benchmarks,
}

/// Outcome of a single replication, exposed for fine-grained tests.
#[derive(Clone, Copy, Debug)]
pub struct Replication {
    pub mean_outcome: f64,
    pub threshold: Option<f64>,
}

/// Build settings used inside the study: plain logistic models everywhere.
fn study_build_settings(method: Method) -> BuildSettings {
    let mut settings = BuildSettings::defaults_for(OutcomeKind::Binary);
    settings.weighting = match method {
        Method::Weighted => Weighting::Stabilized,
        Method::Naive => Weighting::Unweighted,
    };
    settings
}

/// The decision threshold in x where the two fitted arm models cross,
/// from the intercept and x coefficients (the g coefficient is noise).
pub fn implied_threshold(rule: &TreatmentRule) -> Option<f64> {
    let pos = rule.f0.coefficient_names.iter().position(|n| n == "x")?;
    let d_slope = rule.f1.coefficients[pos] - rule.f0.coefficients[pos];
    let d_intercept = rule.f1.coefficients[0] - rule.f0.coefficients[0];
    if d_slope.abs() <= 1e-12 {
        return None;
    }
    Some(-d_intercept / d_slope)
}

/// One replication: draw a development set, build the rule, measure it.
pub fn run_replication(
    method: Method,
    n_dev: usize,
    replication: usize,
    config: &SimConfig,
) -> Result<Replication> {
    let seed = seeding::replication_seed(config.base_seed, method.label(), n_dev, replication);
    let dev = generate(n_dev, &config.coefficients, seed)?;
    let settings = study_build_settings(method);
    let (rule, _) = build_rule(&dev, &sim_roles(), &settings)?;
    let mean_outcome = true_mean_outcome(
        &SimPolicy::Rule(&rule),
        &config.coefficients,
        config.n_eval,
        seeding::derive(seed, "eval"),
    )?;
    Ok(Replication {
        mean_outcome,
        threshold: implied_threshold(&rule),
    })
}

/// Run the full (method x size) grid. Replications whose model fitting
/// fails are counted and excluded from the averages.
pub fn run_study(config: &SimConfig, methods: &[Method], sizes: &[usize]) -> Result<StudyGrid> {
    config.validate()?;
    if methods.is_empty() || sizes.is_empty() {
        return Err(Error::Config(
            "the study needs at least one method and one size".into(),
        ));
    }
    let mut cells = Vec::new();
    for &method in methods {
        for &n_dev in sizes {
            let outcomes: Vec<Result<Replication>> = (0..config.replications)
                .into_par_iter()
                .map(|r| run_replication(method, n_dev, r, config))
                .collect();
            let ok: Vec<&Replication> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
            let failures = config.replications - ok.len();
            if ok.is_empty() {
                return Err(Error::Numerical(format!(
                    "every replication failed for method {} at n_dev {n_dev}",
                    method.label()
                )));
            }
            let m = ok.len() as f64;
            let mean_outcome = ok.iter().map(|r| r.mean_outcome).sum::<f64>() / m;
            let sd_outcome = if ok.len() > 1 {
                let ss = ok
                    .iter()
                    .map(|r| (r.mean_outcome - mean_outcome).powi(2))
                    .sum::<f64>();
                (ss / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            let thresholds: Vec<f64> = ok.iter().filter_map(|r| r.threshold).collect();
            let mean_threshold = if thresholds.is_empty() {
                None
            } else {
                Some(thresholds.iter().sum::<f64>() / thresholds.len() as f64)
            };
            cells.push(StudyCell {
                method: method.label().to_string(),
                n_dev,
                replications: config.replications,
                failures,
                mean_outcome,
                sd_outcome,
                mean_threshold,
            });
        }
    }
    let bench = benchmarks(
        &config.coefficients,
        config.benchmark_rows,
        seeding::derive(config.base_seed, "benchmark"),
    )?;
    Ok(StudyGrid {
        config: *config,
        sizes: sizes.to_vec(),
        methods: methods.iter().map(|m| m.label().to_string()).collect(),
        cells,
        benchmarks: bench,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_marginals_match_their_laws() {
        let data = generate(100_000, &SimCoefficients::default(), 123).unwrap();
        let t = data.treatment_values();
        let p_treat = t.iter().sum::<f64>() / t.len() as f64;
        // P(T=1) = 0.75/2 + 0.25/2 = 0.5; 3 binomial SEs at n=100k is 0.0047.
        assert!((p_treat - 0.5).abs() < 0.0047, "P(T=1) = {p_treat}");
        let x = match data.column("x").unwrap() {
            Column::Numeric(v) => v,
            _ => unreachable!(),
        };
        let mean_x = x.iter().sum::<f64>() / x.len() as f64;
        assert!((mean_x - 1.0).abs() < 0.006, "E[X] = {mean_x}");
        assert!(x.iter().all(|&v| (0.0..2.0).contains(&v)));
        // Confounding direction: treated rows have lower mean l.
        let l = match data.column("l").unwrap() {
            Column::Numeric(v) => v,
            _ => unreachable!(),
        };
        let mean_l_treated: f64 = l
            .iter()
            .zip(t)
            .filter(|(_, &ti)| ti == 1.0)
            .map(|(li, _)| li)
            .sum::<f64>()
            / t.iter().filter(|&&ti| ti == 1.0).count() as f64;
        assert!(mean_l_treated < 0.3, "E[L | T=1] = {mean_l_treated}");
    }

    #[test]
    fn generation_is_reproducible_and_seed_sensitive() {
        let c = SimCoefficients::default();
        let a = generate(500, &c, 7).unwrap();
        let b = generate(500, &c, 7).unwrap();
        assert_eq!(a.column("x"), b.column("x"));
        assert_eq!(a.column("y"), b.column("y"));
        let d = generate(500, &c, 8).unwrap();
        assert_ne!(a.column("x"), d.column("x"));
    }

    #[test]
    fn constant_generator_makes_every_policy_equal() {
        let flat = SimCoefficients {
            control: [0.3, 0.0, 0.0],
            treated: [0.3, 0.0, 0.0],
        };
        let a = true_mean_outcome(&SimPolicy::TreatAll, &flat, 20_000, 5).unwrap();
        let b = true_mean_outcome(&SimPolicy::TreatNone, &flat, 20_000, 5).unwrap();
        let c = true_mean_outcome(&SimPolicy::Optimal, &flat, 20_000, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        assert!((a - expit(0.3)).abs() < 1e-12);
    }

    #[test]
    fn benchmarks_agree_with_per_policy_estimates() {
        let c = SimCoefficients::default();
        let bench = benchmarks(&c, 200_000, 99).unwrap();
        let all = true_mean_outcome(&SimPolicy::TreatAll, &c, 200_000, 42).unwrap();
        let none = true_mean_outcome(&SimPolicy::TreatNone, &c, 200_000, 42).unwrap();
        let best = true_mean_outcome(&SimPolicy::Optimal, &c, 200_000, 42).unwrap();
        assert!((bench.treat_all - all).abs() < 0.004);
        assert!((bench.treat_none - none).abs() < 0.004);
        assert!((bench.optimal - best).abs() < 0.004);
        assert!(bench.optimal > bench.treat_none);
        assert!(bench.treat_none > bench.treat_all);
    }

    #[test]
    fn optimal_policy_is_a_known_threshold_in_x() {
        // The arm probabilities cross where the linear predictors match:
        // -1.4 + 0.55x = -0.55x, so x* = 14/11.
        let c = SimCoefficients::default();
        let x_star = 14.0 / 11.0;
        for l in [0.0, 1.0] {
            assert!(c.probability(x_star + 0.01, l, 1) > c.probability(x_star + 0.01, l, 0));
            assert!(c.probability(x_star - 0.01, l, 1) < c.probability(x_star - 0.01, l, 0));
        }
    }

    #[test]
    fn replication_seeds_decouple_grid_cells() {
        let config = SimConfig {
            replications: 3,
            n_eval: 2000,
            ..Default::default()
        };
        let a = run_replication(Method::Weighted, 200, 0, &config).unwrap();
        let b = run_replication(Method::Weighted, 200, 0, &config).unwrap();
        assert_eq!(a.mean_outcome, b.mean_outcome);
        let c = run_replication(Method::Weighted, 200, 1, &config).unwrap();
        assert_ne!(a.mean_outcome, c.mean_outcome);
        let d = run_replication(Method::Naive, 200, 0, &config).unwrap();
        assert_ne!(a.mean_outcome, d.mean_outcome);
    }

    #[test]
    fn small_study_grid_is_reproducible_and_sane() {
        let config = SimConfig {
            replications: 8,
            n_eval: 2000,
            benchmark_rows: 20_000,
            base_seed: 3,
            ..Default::default()
        };
        let grid = run_study(&config, &[Method::Weighted], &[100]).unwrap();
        assert_eq!(grid.cells.len(), 1);
        let cell = &grid.cells[0];
        assert_eq!(cell.replications, 8);
        assert!(cell.failures < 8);
        assert!(cell.mean_outcome > 0.4 && cell.mean_outcome < 0.65);
        let again = run_study(&config, &[Method::Weighted], &[100]).unwrap();
        assert_eq!(
            serde_json::to_string(&grid).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }
}
