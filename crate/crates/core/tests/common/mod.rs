//! Independent oracles for the numeric test suites.
//!
//! Everything here is deliberately written from scratch (dense Gaussian
//! elimination, central finite differences) so that agreement with the
//! library is evidence, not circularity.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Solve A x = b by Gaussian elimination with partial pivoting.
/// Returns None when a pivot collapses (singular system).
#[allow(clippy::needless_range_loop)] // index arithmetic mirrors the textbook elimination
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot =
            (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = rhs[col];
        for k in (col + 1)..n {
            s -= m[col][k] * x[k];
        }
        x[col] = s / m[col][col];
    }
    Some(x)
}

/// Weighted least squares via explicit normal equations (XᵀWX)β = XᵀWy.
pub fn normal_equation_wls(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let p = x[0].len();
    let mut xtwx = vec![vec![0.0; p]; p];
    let mut xtwy = vec![0.0; p];
    for (i, row) in x.iter().enumerate() {
        for j in 0..p {
            xtwy[j] += w[i] * row[j] * y[i];
            for k in 0..p {
                xtwx[j][k] += w[i] * row[j] * row[k];
            }
        }
    }
    gauss_solve(&xtwx, &xtwy)
}

/// Ridge normal equations with the intercept column left unpenalized:
/// (XᵀWX + λ·Σw·I₋)β = XᵀWy where I₋ zeroes the intercept entry.
#[allow(clippy::needless_range_loop)] // index arithmetic mirrors the matrix algebra
pub fn normal_equation_ridge(
    x: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    lambda: f64,
    intercept: usize,
) -> Option<Vec<f64>> {
    let p = x[0].len();
    let wsum: f64 = w.iter().sum();
    let mut xtwx = vec![vec![0.0; p]; p];
    let mut xtwy = vec![0.0; p];
    for (i, row) in x.iter().enumerate() {
        for j in 0..p {
            xtwy[j] += w[i] * row[j] * y[i];
            for k in 0..p {
                xtwx[j][k] += w[i] * row[j] * row[k];
            }
        }
    }
    for j in 0..p {
        if j != intercept {
            xtwx[j][j] += lambda * wsum;
        }
    }
    gauss_solve(&xtwx, &xtwy)
}

/// Mean weighted log-loss: -(1/Σw) Σ wᵢ [yᵢ log μᵢ + (1-yᵢ) log(1-μᵢ)].
pub fn weighted_logloss(x: &[Vec<f64>], y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    let wsum: f64 = w.iter().sum();
    let mut loss = 0.0;
    for (i, row) in x.iter().enumerate() {
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        // log(1 + e^eta) computed stably.
        let log1pe = if eta > 0.0 {
            eta + (-eta).exp().ln_1p()
        } else {
            eta.exp().ln_1p()
        };
        loss += w[i] * (log1pe - y[i] * eta);
    }
    loss / wsum
}

/// Central finite-difference gradient of the mean weighted log-loss.
pub fn logloss_gradient_fd(x: &[Vec<f64>], y: &[f64], w: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; beta.len()];
    for j in 0..beta.len() {
        let h = 1e-5 * beta[j].abs().max(1.0);
        let mut up = beta.to_vec();
        let mut dn = beta.to_vec();
        up[j] += h;
        dn[j] -= h;
        grad[j] = (weighted_logloss(x, y, w, &up) - weighted_logloss(x, y, w, &dn)) / (2.0 * h);
    }
    grad
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random regression instance: intercept plus iid covariates, optional zero weights.
pub struct Instance {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, p: usize, binary: bool) -> Instance {
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    for _ in 0..n {
        let mut row = vec![1.0];
        for _ in 1..p {
            row.push(rng.random_range(-2.0..2.0));
        }
        let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        if binary {
            let mu = 1.0 / (1.0 + (-eta).exp());
            y.push(if rng.random_range(0.0..1.0) < mu {
                1.0
            } else {
                0.0
            });
        } else {
            y.push(eta + rng.random_range(-0.5..0.5));
        }
        w.push(rng.random_range(0.1..3.0));
        x.push(row);
    }
    Instance { x, y, w }
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!(
        (a - b).abs() <= tol,
        "{what}: {a} vs {b} differs by {} (tol {tol})",
        (a - b).abs()
    );
}
