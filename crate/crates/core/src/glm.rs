//! Weighted generalized linear model fitting.
//!
//! One numerical core serves every model in the crate: identity or logit
//! link, optional ridge/lasso penalty, and per-observation weights that may
//! legitimately be zero. The solver routes are
//!
//! * identity, unpenalized: QR on the square-root-weighted rows;
//! * identity, ridge: direct solve of the penalized normal equations;
//! * identity, lasso: cyclic coordinate descent with soft-thresholding;
//! * logit: iteratively reweighted least squares on the weighted log-loss,
//!   with penalized variants running coordinate descent on each working
//!   response.
//!
//! Penalized objectives are normalized by the total weight,
//! `(1/Σw)·loss + λ·P(β)`, so λ does not change meaning when rows are
//! duplicated or weights rescaled; the ridge normal equations are
//! `(XᵀWX + λ·Σw·I₋)β = XᵀWy` with the intercept entry of `I₋` zeroed.
//! The intercept is never penalized and never standardized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Largest double strictly below 1; predictions are clamped into
/// `[TINY_PROB, MAX_PROB]` so logit output stays in the open interval (0,1).
const MAX_PROB: f64 = 1.0 - f64::EPSILON / 2.0;
const TINY_PROB: f64 = 1e-300;

/// Working-variance floor for IRLS; keeps the working response finite when
/// fitted probabilities saturate.
const IRLS_VAR_FLOOR: f64 = 1e-10;

/// Coefficient sup-norm beyond which a logistic fit is declared separated.
const SEPARATION_NORM: f64 = 1e6;

/// Weighted mean log-loss below which a logistic fit is declared separated:
/// every positive-weight row is then classified perfectly, so the
/// likelihood has no maximizer and the coefficients drift until the fitted
/// probabilities saturate in double precision.
const SEPARATION_LOSS: f64 = 1e-10;

/// Relative pivot threshold for declaring an unpenalized system singular.
const RANK_TOL: f64 = 1e-10;

/// Numerically stable logistic function, clamped into the open unit interval.
pub fn expit(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(TINY_PROB, MAX_PROB)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    None,
    Ridge,
    Lasso,
}

/// Penalty strength: a fixed value, an explicit cross-validation grid, or the
/// default grid derived from the data (100 log-spaced values from λ_max down
/// to 1e-3·λ_max).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaChoice {
    Fixed(f64),
    Grid(Vec<f64>),
    DefaultGrid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlmSpec {
    pub link: Link,
    pub penalty: Penalty,
    pub lambda: LambdaChoice,
    /// Fit penalized models on weighted-standardized columns and
    /// back-transform the coefficients. On by default for penalized specs.
    pub standardize: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl GlmSpec {
    pub fn unpenalized(link: Link) -> Self {
        GlmSpec {
            link,
            penalty: Penalty::None,
            lambda: LambdaChoice::Fixed(0.0),
            standardize: false,
            max_iter: 10_000,
            tol: 1e-7,
        }
    }

    pub fn penalized(link: Link, penalty: Penalty, lambda: LambdaChoice) -> Self {
        GlmSpec {
            link,
            penalty,
            lambda,
            standardize: true,
            max_iter: 10_000,
            tol: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config("tol must be a positive real".into()));
        }
        match &self.lambda {
            LambdaChoice::Fixed(v) if !(v.is_finite() && *v >= 0.0) => Err(Error::Config(format!(
                "lambda must be a non-negative real, got {v}"
            ))),
            LambdaChoice::Grid(g) if g.is_empty() => {
                Err(Error::Config("lambda grid must be non-empty".into()))
            }
            LambdaChoice::Grid(g) if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) => Err(
                Error::Config("lambda grid entries must be non-negative reals".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Cross-validation plan shared by the pipeline stages.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan { folds: 5, seed: 0 }
    }
}

// ================================================================== design matrix

/// Dense row-major design matrix with named columns.
///
/// The intercept (a column identically 1) is detected at construction so the
/// penalized paths can exempt it.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    names: Vec<String>,
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    intercept: Option<usize>,
}

impl DesignMatrix {
    pub fn from_row_major(names: Vec<String>, data: Vec<f64>, n_rows: usize) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Schema(
                "design matrix needs at least one column".into(),
            ));
        }
        let n_cols = names.len();
        if data.len() != n_rows * n_cols {
            return Err(Error::Validation(format!(
                "design data length {} does not match {n_rows} rows x {n_cols} columns",
                data.len()
            )));
        }
        if n_rows == 0 {
            return Err(Error::Validation("design matrix has no rows".into()));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || names[..i].contains(name) {
                return Err(Error::Schema(format!(
                    "design column names must be unique and non-empty; offender '{name}'"
                )));
            }
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "design matrix contains a non-finite entry {bad}"
            )));
        }
        let intercept = (0..n_cols).find(|&j| (0..n_rows).all(|i| data[i * n_cols + j] == 1.0));
        Ok(DesignMatrix {
            names,
            data,
            n_rows,
            n_cols,
            intercept,
        })
    }

    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = names.len();
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in &rows {
            if row.len() != n_cols {
                return Err(Error::Validation(format!(
                    "design row has {} entries, expected {n_cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(names, data, n_rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn intercept_index(&self) -> Option<usize> {
        self.intercept
    }

    /// New matrix holding the given rows (duplicates allowed, for resampling).
    pub fn select_rows(&self, idx: &[usize]) -> Result<DesignMatrix> {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            if i >= self.n_rows {
                return Err(Error::Validation(format!(
                    "row index {i} out of bounds for {} rows",
                    self.n_rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::from_row_major(self.names.clone(), data, idx.len())
    }
}

// ================================================================== fitted model

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedGlm {
    pub coefficient_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub link: Link,
    pub penalty: Penalty,
    /// Resolved penalty strength (0 for unpenalized fits).
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final value of the minimized objective on the fitting scale.
    pub objective: f64,
    pub warnings: Vec<String>,
}

impl FittedGlm {
    pub fn linear_predictor(&self, x: &DesignMatrix) -> Result<Vec<f64>> {
        if x.column_names() != self.coefficient_names.as_slice() {
            return Err(Error::Validation(format!(
                "design columns {:?} do not match model coefficients {:?}",
                x.column_names(),
                self.coefficient_names
            )));
        }
        Ok((0..x.n_rows())
            .map(|i| dot(x.row(i), &self.coefficients))
            .collect())
    }

    /// Mean-scale predictions: the linear predictor under the identity link,
    /// probabilities strictly inside (0,1) under the logit link.
    pub fn predict(&self, x: &DesignMatrix) -> Result<Vec<f64>> {
        let mut eta = self.linear_predictor(x)?;
        if self.link == Link::Logit {
            for v in eta.iter_mut() {
                *v = expit(*v);
            }
        }
        Ok(eta)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ================================================================== fitting

/// Fit a weighted GLM. `spec.lambda` must be resolved (`Fixed`) unless the
/// penalty is `None`; use [`fit_cv`] to resolve a grid by cross-validation.
pub fn fit(x: &DesignMatrix, y: &[f64], w: &[f64], spec: &GlmSpec) -> Result<FittedGlm> {
    validate_inputs(x, y, w, spec)?;
    let lambda = match (&spec.penalty, &spec.lambda) {
        (Penalty::None, _) => 0.0,
        (_, LambdaChoice::Fixed(v)) => *v,
        _ => {
            return Err(Error::Config(
                "lambda is a cross-validation grid; resolve it with fit_cv or cv_lambda".into(),
            ))
        }
    };
    fit_resolved(x, y, w, spec, lambda)
}

/// Resolve a lambda grid by k-fold cross-validation, then fit on all rows.
pub fn fit_cv(
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    spec: &GlmSpec,
    folds: usize,
    seed: u64,
) -> Result<FittedGlm> {
    validate_inputs(x, y, w, spec)?;
    if spec.penalty == Penalty::None {
        return fit_resolved(x, y, w, spec, 0.0);
    }
    if let LambdaChoice::Fixed(v) = spec.lambda {
        return fit_resolved(x, y, w, spec, v);
    }
    let cv = cv_lambda_detailed(x, y, w, spec, folds, seed)?;
    let mut fitted = fit_resolved(x, y, w, spec, cv.lambda)?;
    if cv.skipped_folds > 0 {
        fitted.warnings.push(format!(
            "{} degenerate cross-validation folds were skipped",
            cv.skipped_folds
        ));
    }
    Ok(fitted)
}

fn validate_inputs(x: &DesignMatrix, y: &[f64], w: &[f64], spec: &GlmSpec) -> Result<()> {
    spec.validate()?;
    if y.len() != x.n_rows() || w.len() != x.n_rows() {
        return Err(Error::Validation(format!(
            "response ({}) and weights ({}) must match the {} design rows",
            y.len(),
            w.len(),
            x.n_rows()
        )));
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite response value {bad}"
        )));
    }
    if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Validation(format!(
            "weights must be finite and non-negative, got {bad}"
        )));
    }
    if !w.iter().any(|v| *v > 0.0) {
        return Err(Error::Validation("all observation weights are zero".into()));
    }
    if spec.link == Link::Logit {
        if let Some(bad) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::Validation(format!(
                "logit link requires a 0/1 response, got {bad}"
            )));
        }
    }
    Ok(())
}

fn fit_resolved(
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    spec: &GlmSpec,
    lambda: f64,
) -> Result<FittedGlm> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let mut warnings = Vec::new();

    // Standardization happens on a copy; the returned coefficients are always
    // on the original scale.
    let standardizer = if spec.standardize && spec.penalty != Penalty::None {
        Some(Standardizer::new(x, w))
    } else {
        None
    };
    let owned;
    let fit_data: &[f64] = match &standardizer {
        Some(s) => {
            owned = s.apply(x);
            &owned
        }
        None => x.data(),
    };

    if spec.penalty != Penalty::None {
        for j in constant_columns(x, w) {
            warnings.push(format!(
                "column '{}' is constant under the fit weights; it was retained but carries no signal",
                x.column_names()[j]
            ));
        }
    }

    let wsum: f64 = w.iter().sum();
    let sol = match (spec.link, spec.penalty) {
        (Link::Identity, Penalty::None) => wls_qr(fit_data, x, y, w)?,
        (Link::Identity, Penalty::Ridge) => ridge_direct(fit_data, x, y, w, lambda)?,
        (Link::Identity, Penalty::Lasso) => {
            let warm = vec![0.0; x.n_cols()];
            let cd = coordinate_descent(
                fit_data,
                x.n_rows(),
                x.n_cols(),
                y,
                w,
                wsum,
                Penalty::Lasso,
                lambda,
                x.intercept_index(),
                &warm,
                spec.tol,
                spec.max_iter,
            );
            Solution {
                beta: cd.beta,
                iterations: cd.iterations,
                converged: cd.converged,
            }
        }
        (Link::Logit, _) => irls(fit_data, x, y, w, spec, lambda)?,
    };

    if sol.beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical(
            "fit produced non-finite coefficients".into(),
        ));
    }
    if !sol.converged {
        warnings.push(format!(
            "did not converge within {} iterations (tol {}); coefficients are the last iterate",
            spec.max_iter, spec.tol
        ));
    }

    let objective = objective_value(fit_data, x, y, w, spec, lambda, &sol.beta);
    let beta = match &standardizer {
        Some(s) => s.back_transform(&sol.beta),
        None => sol.beta,
    };

    Ok(FittedGlm {
        coefficient_names: x.column_names().to_vec(),
        coefficients: beta,
        link: spec.link,
        penalty: spec.penalty,
        lambda,
        converged: sol.converged,
        iterations: sol.iterations,
        objective,
        warnings,
    })
}

struct Solution {
    beta: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn constant_columns(x: &DesignMatrix, w: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    for j in 0..x.n_cols() {
        if Some(j) == x.intercept_index() {
            continue;
        }
        let mut first: Option<f64> = None;
        let mut constant = true;
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let v = x.row(i)[j];
            match first {
                None => first = Some(v),
                Some(f) if f != v => {
                    constant = false;
                    break;
                }
                _ => {}
            }
        }
        if constant {
            out.push(j);
        }
    }
    out
}

// ------------------------------------------------------------------ standardization

struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
    intercept: Option<usize>,
}

impl Standardizer {
    /// Weighted means and population standard deviations per column; the
    /// intercept is untouched and constant columns keep scale 1. Without an
    /// intercept column the data are scaled but not centered, since centering
    /// would silently change the model.
    fn new(x: &DesignMatrix, w: &[f64]) -> Standardizer {
        let p = x.n_cols();
        let wsum: f64 = w.iter().sum();
        let mut means = vec![0.0; p];
        let mut scales = vec![1.0; p];
        let center = x.intercept_index().is_some();
        for j in 0..p {
            if Some(j) == x.intercept_index() {
                continue;
            }
            let mut m = 0.0;
            for (i, &wi) in w.iter().enumerate() {
                m += wi * x.row(i)[j];
            }
            m /= wsum;
            let mut v = 0.0;
            for (i, &wi) in w.iter().enumerate() {
                let d = x.row(i)[j] - m;
                v += wi * d * d;
            }
            let s = (v / wsum).sqrt();
            means[j] = if center { m } else { 0.0 };
            scales[j] = if s > 1e-12 { s } else { 1.0 };
        }
        Standardizer {
            means,
            scales,
            intercept: x.intercept_index(),
        }
    }

    fn apply(&self, x: &DesignMatrix) -> Vec<f64> {
        let p = x.n_cols();
        let mut out = x.data().to_vec();
        for i in 0..x.n_rows() {
            for j in 0..p {
                if Some(j) == self.intercept {
                    continue;
                }
                out[i * p + j] = (out[i * p + j] - self.means[j]) / self.scales[j];
            }
        }
        out
    }

    fn back_transform(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = beta.to_vec();
        let mut shift = 0.0;
        for j in 0..beta.len() {
            if Some(j) == self.intercept {
                continue;
            }
            out[j] = beta[j] / self.scales[j];
            shift += beta[j] * self.means[j] / self.scales[j];
        }
        if let Some(ic) = self.intercept {
            out[ic] = beta[ic] - shift;
        }
        out
    }
}

// ------------------------------------------------------------------ solvers

/// Weighted least squares through a thin QR of the square-root-weighted rows.
/// `data` may be a standardized copy of `x`; `x` supplies shape and names.
fn wls_qr(data: &[f64], x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<Solution> {
    let n = x.n_rows();
    let p = x.n_cols();
    let positive = w.iter().filter(|v| **v > 0.0).count();
    if positive < p {
        return Err(Error::RankDeficient(format!(
            "{positive} positively weighted rows cannot identify {p} coefficients"
        )));
    }
    let mut a = DMatrix::<f64>::zeros(n, p);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        let s = w[i].sqrt();
        for j in 0..p {
            a[(i, j)] = s * data[i * p + j];
        }
        b[i] = s * y[i];
    }
    let qr = a.qr();
    let qtb = qr.q().tr_mul(&b);
    let r = qr.r();
    let maxdiag = (0..p).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if maxdiag == 0.0 {
        return Err(Error::RankDeficient("design matrix is zero".into()));
    }
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let d = r[(k, k)];
        if d.abs() < RANK_TOL * maxdiag {
            return Err(Error::RankDeficient(format!(
                "column '{}' is collinear with earlier columns",
                x.column_names()[k]
            )));
        }
        let mut s = qtb[k];
        for m in (k + 1)..p {
            s -= r[(k, m)] * beta[m];
        }
        beta[k] = s / d;
    }
    Ok(Solution {
        beta,
        iterations: 1,
        converged: true,
    })
}

/// Direct solve of (XᵀWX + λ·Σw·I₋)β = XᵀWy, intercept unpenalized.
fn ridge_direct(
    data: &[f64],
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<Solution> {
    let n = x.n_rows();
    let p = x.n_cols();
    let wsum: f64 = w.iter().sum();
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let row = &data[i * p..(i + 1) * p];
        for j in 0..p {
            let wj = w[i] * row[j];
            b[j] += wj * y[i];
            for k in j..p {
                a[(j, k)] += wj * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
    }
    for j in 0..p {
        if Some(j) != x.intercept_index() {
            a[(j, j)] += lambda * wsum;
        }
    }
    let beta = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a.lu().solve(&b).ok_or_else(|| {
            Error::RankDeficient("penalized normal equations are singular".into())
        })?,
    };
    Ok(Solution {
        beta: beta.iter().copied().collect(),
        iterations: 1,
        converged: true,
    })
}

struct CdResult {
    beta: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on the normalized penalized weighted least
/// squares objective (1/(2·norm))·Σ wᵢ(yᵢ-xᵢᵀβ)² + λ·P(β₋).
///
/// `norm` is the total prior weight: for identity-link fits it equals Σw, and
/// inside IRLS it stays the prior weight sum while `w` carries the working
/// weights, which keeps λ on the log-loss scale.
#[allow(clippy::too_many_arguments)]
fn coordinate_descent(
    data: &[f64],
    n_rows: usize,
    n_cols: usize,
    y: &[f64],
    w: &[f64],
    norm: f64,
    penalty: Penalty,
    lambda: f64,
    intercept: Option<usize>,
    warm: &[f64],
    tol: f64,
    max_iter: usize,
) -> CdResult {
    // Column-major copy: the sweeps walk columns.
    let mut cols = vec![vec![0.0; n_rows]; n_cols];
    for i in 0..n_rows {
        for j in 0..n_cols {
            cols[j][i] = data[i * n_cols + j];
        }
    }
    let z: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>() / norm)
        .collect();

    let mut beta = warm.to_vec();
    let mut resid: Vec<f64> = (0..n_rows)
        .map(|i| y[i] - dot(&data[i * n_cols..(i + 1) * n_cols], &beta))
        .collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut max_delta = 0.0_f64;
        for j in 0..n_cols {
            if z[j] == 0.0 {
                continue;
            }
            let col = &cols[j];
            let mut rho = 0.0;
            for i in 0..n_rows {
                rho += w[i] * col[i] * resid[i];
            }
            rho = rho / norm + z[j] * beta[j];
            let new = if Some(j) == intercept {
                rho / z[j]
            } else {
                match penalty {
                    Penalty::Lasso => soft_threshold(rho, lambda) / z[j],
                    Penalty::Ridge => rho / (z[j] + lambda),
                    Penalty::None => rho / z[j],
                }
            };
            let delta = new - beta[j];
            if delta != 0.0 {
                for i in 0..n_rows {
                    resid[i] -= delta * col[i];
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < tol {
            converged = true;
            break;
        }
    }
    CdResult {
        beta,
        iterations,
        converged,
    }
}

/// IRLS for the logit link. Unpenalized steps solve the working weighted
/// least squares by QR; penalized steps run coordinate descent on the working
/// response with the prior-weight normalizer.
fn irls(
    data: &[f64],
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    spec: &GlmSpec,
    lambda: f64,
) -> Result<Solution> {
    let n = x.n_rows();
    let p = x.n_cols();
    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(yi, wi)| yi * wi).sum::<f64>() / wsum;
    if ybar == 0.0 || ybar == 1.0 {
        return Err(Error::Separation(
            "the response has a single class under positive weights".into(),
        ));
    }

    let mut beta = vec![0.0; p];
    if let Some(ic) = x.intercept_index() {
        beta[ic] = (ybar / (1.0 - ybar)).ln();
    }

    let mut z = vec![0.0; n];
    let mut wk = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < spec.max_iter {
        iterations += 1;
        let mut loss = 0.0;
        for i in 0..n {
            let eta = dot(&data[i * p..(i + 1) * p], &beta);
            let mu = expit(eta);
            let var = (mu * (1.0 - mu)).max(IRLS_VAR_FLOOR);
            z[i] = eta + (y[i] - mu) / var;
            wk[i] = w[i] * var;
            if w[i] > 0.0 {
                let log1pe = if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                };
                loss += w[i] * (log1pe - y[i] * eta);
            }
        }
        if (spec.penalty == Penalty::None || lambda == 0.0) && loss / wsum < SEPARATION_LOSS {
            return Err(Error::Separation(
                "the classes are perfectly separated; the log-loss is numerically zero".into(),
            ));
        }
        let next = match spec.penalty {
            Penalty::None => wls_qr(data, x, &z, &wk)?.beta,
            pen => {
                coordinate_descent(
                    data,
                    n,
                    p,
                    &z,
                    &wk,
                    wsum,
                    pen,
                    lambda,
                    x.intercept_index(),
                    &beta,
                    spec.tol,
                    spec.max_iter,
                )
                .beta
            }
        };
        let max_delta = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = next;
        let sup = beta.iter().fold(0.0_f64, |m, b| m.max(b.abs()));
        if !sup.is_finite() || sup > SEPARATION_NORM {
            return Err(Error::Separation(
                "coefficients diverged during iteratively reweighted least squares".into(),
            ));
        }
        if max_delta < spec.tol {
            converged = true;
            break;
        }
    }
    Ok(Solution {
        beta,
        iterations,
        converged,
    })
}

fn objective_value(
    data: &[f64],
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    spec: &GlmSpec,
    lambda: f64,
    beta: &[f64],
) -> f64 {
    let n = x.n_rows();
    let p = x.n_cols();
    let wsum: f64 = w.iter().sum();
    let mut loss = 0.0;
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let eta = dot(&data[i * p..(i + 1) * p], beta);
        loss += match spec.link {
            Link::Identity => {
                let r = y[i] - eta;
                0.5 * w[i] * r * r
            }
            Link::Logit => {
                let log1pe = if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                };
                w[i] * (log1pe - y[i] * eta)
            }
        };
    }
    loss /= wsum;
    let pen: f64 = beta
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != x.intercept_index())
        .map(|(_, b)| match spec.penalty {
            Penalty::Lasso => b.abs(),
            Penalty::Ridge => 0.5 * b * b,
            Penalty::None => 0.0,
        })
        .sum();
    loss + lambda * pen
}

// ================================================================== lambda selection

/// Smallest λ that zeroes every non-intercept coefficient of the null-model
/// subgradient: the largest weighted covariate-residual correlation computed
/// on the model spec's fitting scale.
pub fn lambda_max(x: &DesignMatrix, y: &[f64], w: &[f64], spec: &GlmSpec) -> Result<f64> {
    validate_inputs(x, y, w, spec)?;
    let standardizer = if spec.standardize {
        Some(Standardizer::new(x, w))
    } else {
        None
    };
    let owned;
    let data: &[f64] = match &standardizer {
        Some(s) => {
            owned = s.apply(x);
            &owned
        }
        None => x.data(),
    };
    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(yi, wi)| yi * wi).sum::<f64>() / wsum;
    let null_mean = match spec.link {
        Link::Identity => ybar,
        Link::Logit => ybar.clamp(1e-6, 1.0 - 1e-6),
    };
    let p = x.n_cols();
    let mut best = 0.0_f64;
    for j in 0..p {
        if Some(j) == x.intercept_index() {
            continue;
        }
        let mut c = 0.0;
        for i in 0..x.n_rows() {
            c += w[i] * data[i * p + j] * (y[i] - null_mean);
        }
        best = best.max((c / wsum).abs());
    }
    Ok(best)
}

/// Default grid: 100 log-spaced values from λ_max down to 1e-3·λ_max,
/// descending.
pub fn default_grid(lambda_max: f64) -> Vec<f64> {
    if !lambda_max.is_finite() || lambda_max <= 0.0 {
        return vec![0.0];
    }
    (0..100)
        .map(|k| lambda_max * 10f64.powf(-3.0 * k as f64 / 99.0))
        .collect()
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Mean held-out weighted loss per grid value (same order as `grid`).
    pub mean_loss: Vec<f64>,
    pub skipped_folds: usize,
}

/// Pick λ from the model spec's grid by k-fold cross-validation: the value
/// minimizing mean held-out weighted loss (squared error under identity,
/// log-loss under logit). Ties go to the larger λ. Degenerate folds
/// (single-class response under logit, or zero held-out weight) are skipped.
pub fn cv_lambda(
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    spec: &GlmSpec,
    folds: usize,
    seed: u64,
) -> Result<f64> {
    Ok(cv_lambda_detailed(x, y, w, spec, folds, seed)?.lambda)
}

pub fn cv_lambda_detailed(
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    spec: &GlmSpec,
    folds: usize,
    seed: u64,
) -> Result<CvReport> {
    validate_inputs(x, y, w, spec)?;
    if spec.penalty == Penalty::None {
        return Ok(CvReport {
            lambda: 0.0,
            grid: vec![0.0],
            mean_loss: vec![],
            skipped_folds: 0,
        });
    }
    if let LambdaChoice::Fixed(v) = spec.lambda {
        return Ok(CvReport {
            lambda: v,
            grid: vec![v],
            mean_loss: vec![],
            skipped_folds: 0,
        });
    }
    let n = x.n_rows();
    if folds < 2 {
        return Err(Error::Config(
            "cross-validation needs at least 2 folds".into(),
        ));
    }
    if folds > n {
        return Err(Error::Config(format!(
            "cannot form {folds} folds from {n} rows"
        )));
    }

    let mut grid = match &spec.lambda {
        LambdaChoice::Grid(g) => {
            let mut g = g.clone();
            g.sort_by(|a, b| b.partial_cmp(a).unwrap());
            g.dedup();
            g
        }
        LambdaChoice::DefaultGrid => default_grid(lambda_max(x, y, w, spec)?),
        LambdaChoice::Fixed(_) => unreachable!(),
    };
    if grid.is_empty() {
        grid.push(0.0);
    }

    // Seeded shuffle, then round-robin fold assignment.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeding::rng(seed);
    fisher_yates(&mut order, &mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % folds;
    }

    let mut sums = vec![0.0f64; grid.len()];
    let mut used_folds = 0usize;
    let mut skipped = 0usize;

    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|i| fold_of[*i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|i| fold_of[*i] == f).collect();
        let wtest: f64 = test.iter().map(|&i| w[i]).sum();
        if wtest == 0.0 {
            skipped += 1;
            continue;
        }
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let tw: Vec<f64> = train.iter().map(|&i| w[i]).collect();
        if !tw.iter().any(|v| *v > 0.0) {
            skipped += 1;
            continue;
        }
        if spec.link == Link::Logit {
            let s: f64 = ty.iter().zip(&tw).map(|(a, b)| a * b).sum();
            let t: f64 = tw.iter().sum();
            if s == 0.0 || s == t {
                skipped += 1;
                continue;
            }
        }
        let tx = x.select_rows(&train)?;
        let mut ok = true;
        let mut fold_losses = vec![f64::INFINITY; grid.len()];
        for (gi, &lam) in grid.iter().enumerate() {
            match fit_resolved(&tx, &ty, &tw, spec, lam) {
                Ok(m) => {
                    let mut loss = 0.0;
                    for &i in &test {
                        let eta = dot(x.row(i), &m.coefficients);
                        loss += match spec.link {
                            Link::Identity => {
                                let r = y[i] - eta;
                                w[i] * r * r
                            }
                            Link::Logit => {
                                let mu = expit(eta);
                                -w[i] * (y[i] * mu.ln() + (1.0 - y[i]) * (1.0 - mu).ln())
                            }
                        };
                    }
                    fold_losses[gi] = loss / wtest;
                }
                Err(e) if e.is_numerical() => {
                    // This grid value failed on this fold; disqualify it but
                    // keep the fold for the others.
                }
                Err(e) => return Err(e),
            }
        }
        if fold_losses.iter().all(|l| l.is_infinite()) {
            ok = false;
        }
        if ok {
            used_folds += 1;
            for (s, l) in sums.iter_mut().zip(&fold_losses) {
                *s += l;
            }
        } else {
            skipped += 1;
        }
    }

    if used_folds == 0 {
        return Err(Error::Numerical(
            "every cross-validation fold was degenerate".into(),
        ));
    }
    let mean_loss: Vec<f64> = sums.iter().map(|s| s / used_folds as f64).collect();
    let mut best = 0usize;
    for gi in 1..grid.len() {
        if mean_loss[gi] < mean_loss[best] {
            best = gi;
        }
    }
    if mean_loss[best].is_infinite() {
        return Err(Error::Numerical(
            "cross-validation failed on every grid value".into(),
        ));
    }
    Ok(CvReport {
        lambda: grid[best],
        grid,
        mean_loss,
        skipped_folds: skipped,
    })
}

pub(crate) fn fisher_yates<T>(items: &mut [T], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DesignMatrix, Vec<f64>, Vec<f64>) {
        let x = DesignMatrix::from_rows(
            vec!["intercept".into(), "x".into()],
            vec![
                vec![1.0, 0.0],
                vec![1.0, 1.0],
                vec![1.0, 2.0],
                vec![1.0, 3.0],
            ],
        )
        .unwrap();
        (x, vec![0.1, 1.2, 1.9, 3.1], vec![1.0; 4])
    }

    #[test]
    fn intercept_detection_and_row_access() {
        let (x, _, _) = toy();
        assert_eq!(x.intercept_index(), Some(0));
        assert_eq!(x.row(2), &[1.0, 2.0]);
        let no_icpt =
            DesignMatrix::from_rows(vec!["a".into()], vec![vec![0.5], vec![1.0]]).unwrap();
        assert_eq!(no_icpt.intercept_index(), None);
    }

    #[test]
    fn rejects_non_finite_and_mismatched_inputs() {
        assert!(DesignMatrix::from_rows(vec!["a".into()], vec![vec![f64::NAN]]).is_err());
        let (x, y, _) = toy();
        let spec = GlmSpec::unpenalized(Link::Identity);
        assert!(fit(&x, &y, &[1.0, 1.0], &spec).is_err());
        assert!(fit(&x, &y, &[1.0, -1.0, 1.0, 1.0], &spec).is_err());
        assert!(fit(&x, &[0.5, 0.5, 0.5, f64::INFINITY], &[1.0; 4], &spec).is_err());
    }

    #[test]
    fn logit_requires_binary_response() {
        let (x, _, w) = toy();
        let spec = GlmSpec::unpenalized(Link::Logit);
        let err = fit(&x, &[0.0, 1.0, 0.5, 1.0], &w, &spec).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn collinear_columns_produce_rank_error_naming_the_column() {
        let x = DesignMatrix::from_rows(
            vec!["intercept".into(), "a".into(), "twice_a".into()],
            vec![
                vec![1.0, 1.0, 2.0],
                vec![1.0, 2.0, 4.0],
                vec![1.0, 3.0, 6.0],
                vec![1.0, 4.0, 8.0],
            ],
        )
        .unwrap();
        let err = fit(
            &x,
            &[1.0, 2.0, 3.0, 4.0],
            &[1.0; 4],
            &GlmSpec::unpenalized(Link::Identity),
        )
        .unwrap_err();
        match err {
            Error::RankDeficient(msg) => assert!(msg.contains("twice_a"), "{msg}"),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn separation_is_detected_as_a_dedicated_error() {
        let x = DesignMatrix::from_rows(
            vec!["intercept".into(), "x".into()],
            (0..20)
                .map(|i| {
                    vec![
                        1.0,
                        if i < 10 {
                            -1.0 - 0.1 * i as f64
                        } else {
                            1.0 + 0.1 * i as f64
                        },
                    ]
                })
                .collect(),
        )
        .unwrap();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        let err = fit(&x, &y, &[1.0; 20], &GlmSpec::unpenalized(Link::Logit)).unwrap_err();
        assert!(matches!(err, Error::Separation(_)), "{err:?}");
    }

    #[test]
    fn unresolved_grid_is_a_config_error_for_fit() {
        let (x, y, w) = toy();
        let spec = GlmSpec::penalized(Link::Identity, Penalty::Lasso, LambdaChoice::DefaultGrid);
        assert!(matches!(fit(&x, &y, &w, &spec), Err(Error::Config(_))));
        // fit_cv resolves it.
        let fitted = fit_cv(&x, &y, &w, &spec, 2, 7).unwrap();
        assert!(fitted.lambda >= 0.0);
    }

    #[test]
    fn default_grid_is_descending_log_spaced_100_values() {
        let g = default_grid(2.0);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 2.0);
        assert!((g[99] - 0.002).abs() < 1e-12);
        assert!(g.windows(2).all(|p| p[0] > p[1]));
        // Log spacing: constant ratio.
        let r0 = g[1] / g[0];
        assert!(g.windows(2).all(|p| (p[1] / p[0] - r0).abs() < 1e-9));
        assert_eq!(default_grid(0.0), vec![0.0]);
    }

    #[test]
    fn ridge_norm_is_monotone_in_lambda() {
        let mut rng = seeding::rng(99);
        use rand::Rng;
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let a: f64 = rng.random_range(-2.0..2.0);
                let b: f64 = rng.random_range(-2.0..2.0);
                vec![1.0, a, 0.8 * a + 0.2 * b]
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 1.0 + r[1] - 2.0 * r[2]).collect();
        let x = DesignMatrix::from_rows(vec!["intercept".into(), "a".into(), "b".into()], rows)
            .unwrap();
        let w = vec![1.0; 60];
        let mut last = f64::INFINITY;
        for lam in [0.0, 0.01, 0.1, 1.0, 10.0] {
            let mut spec =
                GlmSpec::penalized(Link::Identity, Penalty::Ridge, LambdaChoice::Fixed(lam));
            spec.standardize = false;
            let m = fit(&x, &y, &w, &spec).unwrap();
            let norm: f64 = m.coefficients[1..]
                .iter()
                .map(|b| b * b)
                .sum::<f64>()
                .sqrt();
            assert!(
                norm <= last + 1e-10,
                "norm rose from {last} to {norm} at lambda {lam}"
            );
            last = norm;
        }
    }

    #[test]
    fn constant_column_in_penalized_fit_warns_but_fits() {
        let x = DesignMatrix::from_rows(
            vec!["intercept".into(), "k".into(), "x".into()],
            vec![
                vec![1.0, 3.0, 0.0],
                vec![1.0, 3.0, 1.0],
                vec![1.0, 3.0, 2.0],
            ],
        )
        .unwrap();
        let spec = GlmSpec::penalized(Link::Identity, Penalty::Lasso, LambdaChoice::Fixed(0.01));
        let m = fit(&x, &[0.0, 1.0, 2.0], &[1.0; 3], &spec).unwrap();
        assert!(
            m.warnings.iter().any(|w| w.contains("'k'")),
            "{:?}",
            m.warnings
        );
    }

    #[test]
    fn predict_rejects_mismatched_columns() {
        let (x, y, w) = toy();
        let m = fit(&x, &y, &w, &GlmSpec::unpenalized(Link::Identity)).unwrap();
        let other =
            DesignMatrix::from_rows(vec!["intercept".into(), "z".into()], vec![vec![1.0, 1.0]])
                .unwrap();
        assert!(m.predict(&other).is_err());
    }

    #[test]
    fn logit_predictions_stay_inside_the_open_unit_interval() {
        let m = FittedGlm {
            coefficient_names: vec!["intercept".into(), "x".into()],
            coefficients: vec![0.0, 100.0],
            link: Link::Logit,
            penalty: Penalty::None,
            lambda: 0.0,
            converged: true,
            iterations: 1,
            objective: 0.0,
            warnings: vec![],
        };
        let x = DesignMatrix::from_rows(
            vec!["intercept".into(), "x".into()],
            vec![vec![1.0, -400.0], vec![1.0, 400.0]],
        )
        .unwrap();
        let p = m.predict(&x).unwrap();
        assert!(p[0] > 0.0 && p[0] < 1.0);
        assert!(p[1] > 0.0 && p[1] < 1.0);
    }

    #[test]
    fn standardized_fit_equals_manual_prestandardization() {
        use rand::Rng;
        let mut rng = seeding::rng(5);
        let n = 80;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![1.0, rng.random_range(5.0..9.0), rng.random_range(-0.1..0.1)])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 0.3 * r[1] - 4.0 * r[2] + rng.random_range(-0.2..0.2))
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let names = vec!["intercept".to_string(), "a".to_string(), "b".to_string()];
        let x = DesignMatrix::from_rows(names.clone(), rows.clone()).unwrap();

        let spec = GlmSpec::penalized(Link::Identity, Penalty::Lasso, LambdaChoice::Fixed(0.05));
        let auto = fit(&x, &y, &w, &spec).unwrap();

        // Standardize by hand, fit raw, back-transform by hand.
        let wsum: f64 = w.iter().sum();
        let mut means = [0.0; 2];
        let mut scales = [0.0; 2];
        for j in 0..2 {
            let m: f64 = rows
                .iter()
                .zip(&w)
                .map(|(r, wi)| wi * r[j + 1])
                .sum::<f64>()
                / wsum;
            let v: f64 = rows
                .iter()
                .zip(&w)
                .map(|(r, wi)| wi * (r[j + 1] - m).powi(2))
                .sum::<f64>()
                / wsum;
            means[j] = m;
            scales[j] = v.sqrt();
        }
        let std_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                vec![
                    1.0,
                    (r[1] - means[0]) / scales[0],
                    (r[2] - means[1]) / scales[1],
                ]
            })
            .collect();
        let xs = DesignMatrix::from_rows(names, std_rows).unwrap();
        let mut raw_spec = spec.clone();
        raw_spec.standardize = false;
        let manual = fit(&xs, &y, &w, &raw_spec).unwrap();
        let b1 = manual.coefficients[1] / scales[0];
        let b2 = manual.coefficients[2] / scales[1];
        let b0 = manual.coefficients[0]
            - manual.coefficients[1] * means[0] / scales[0]
            - manual.coefficients[2] * means[1] / scales[1];
        assert!((auto.coefficients[0] - b0).abs() < 1e-8);
        assert!((auto.coefficients[1] - b1).abs() < 1e-8);
        assert!((auto.coefficients[2] - b2).abs() < 1e-8);
    }
}
