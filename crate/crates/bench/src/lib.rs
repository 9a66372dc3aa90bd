//! Shared fixtures for the benchmark targets: deterministic synthetic
//! regression instances and confounded cohorts at benchmark-relevant sizes.

use itr_core::glm::DesignMatrix;
use itr_core::simulate::{generate, SimCoefficients};
use itr_core::tabular::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A weighted regression instance with an intercept column, `p` standard
/// uniform covariates, and both continuous and binary responses driven by
/// the same sparse linear signal.
pub struct Instance {
    pub x: DesignMatrix,
    pub y_continuous: Vec<f64>,
    pub y_binary: Vec<f64>,
    pub w: Vec<f64>,
}

pub fn instance(n: usize, p: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = vec!["intercept".to_string()];
    names.extend((0..p).map(|j| format!("x{j}")));
    let mut data = Vec::with_capacity(n * (p + 1));
    let mut y_continuous = Vec::with_capacity(n);
    let mut y_binary = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(1.0);
        let mut eta = 0.3;
        for j in 0..p {
            let v: f64 = rng.random_range(-1.0..1.0);
            // Only the first three covariates carry signal.
            if j < 3 {
                eta += (j as f64 + 1.0) * 0.4 * v;
            }
            data.push(v);
        }
        y_continuous.push(eta + rng.random_range(-0.5..0.5));
        let prob = 1.0 / (1.0 + (-eta).exp());
        y_binary.push(if rng.random_bool(prob) { 1.0 } else { 0.0 });
        w.push(rng.random_range(0.2..2.0));
    }
    let x = DesignMatrix::from_row_major(names, data, n).expect("valid fixture design");
    Instance {
        x,
        y_continuous,
        y_binary,
        w,
    }
}

/// A confounded observational cohort from the built-in generator.
pub fn cohort(n: usize, seed: u64) -> Dataset {
    generate(n, &SimCoefficients::default(), seed).expect("valid fixture cohort")
}
