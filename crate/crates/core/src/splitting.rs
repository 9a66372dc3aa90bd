//! Seeded partitioning of a dataset into development, validation, and
//! evaluation parts. The split is a uniformly random partition driven by a
//! Fisher-Yates shuffle of row indices, optionally stratified by treatment
//! arm so both arms appear in every part at roughly the declared fractions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::fisher_yates;
use crate::seeding;
use crate::tabular::Dataset;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Two or three positive fractions summing to 1.
    pub fractions: Vec<f64>,
    pub seed: u64,
    /// Shuffle each treatment arm separately and interleave the quotas.
    #[serde(default)]
    pub stratify_by_treatment: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: vec![0.5, 0.25, 0.25],
            seed: 0,
            stratify_by_treatment: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.fractions.len();
        if !(2..=3).contains(&k) {
            return Err(Error::Config(format!(
                "a split needs 2 or 3 fractions, got {k}"
            )));
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config(
                "split fractions must lie strictly between 0 and 1".into(),
            ));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

/// One part of a split: the original row indices (sorted) and the rows.
#[derive(Clone, Debug)]
pub struct SplitPart {
    pub indices: Vec<usize>,
    pub data: Dataset,
}

/// Integer part sizes for `n` rows under the given fractions: floors first,
/// leftover rows to the earliest parts, then a repair pass so no part is
/// empty while another can spare a row (possible whenever n >= parts).
pub fn part_sizes(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut sizes: Vec<usize> = fractions
        .iter()
        .map(|f| (f * n as f64).floor() as usize)
        .collect();
    let k = sizes.len();
    let mut assigned: usize = sizes.iter().sum();
    let mut i = 0;
    while assigned < n {
        sizes[i % k] += 1;
        assigned += 1;
        i += 1;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let donor = (0..sizes.len())
            .filter(|&j| sizes[j] >= 2)
            .max_by_key(|&j| sizes[j]);
        match donor {
            Some(d) => {
                sizes[d] -= 1;
                sizes[empty] += 1;
            }
            None => break,
        }
    }
    sizes
}

/// Partition `0..n` into parts of the sizes implied by `spec.fractions`.
/// Indices within each part are sorted ascending.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if n < spec.fractions.len() {
        return Err(Error::Validation(format!(
            "cannot split {n} rows into {} non-empty parts",
            spec.fractions.len()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeding::rng(spec.seed);
    fisher_yates(&mut order, &mut rng);
    Ok(take_parts(&order, &part_sizes(n, &spec.fractions)))
}

fn take_parts(order: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        let mut part: Vec<usize> = order[start..start + s].to_vec();
        part.sort_unstable();
        parts.push(part);
        start += s;
    }
    parts
}

/// Split a dataset. With stratification, each treatment arm is shuffled and
/// quota-partitioned separately (sub-streams derived from the seed), so the
/// arm mix of every part tracks the full data.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<Vec<SplitPart>> {
    spec.validate()?;
    let k = spec.fractions.len();
    let parts_idx: Vec<Vec<usize>> = if spec.stratify_by_treatment {
        let treated = data.arm_indices(1);
        let control = data.arm_indices(0);
        if treated.len() < k || control.len() < k {
            return Err(Error::Validation(format!(
                "stratified split needs at least {k} rows per arm, got {} treated and {} control",
                treated.len(),
                control.len()
            )));
        }
        let mut merged: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (tag, arm) in [("arm1", &treated), ("arm0", &control)] {
            let mut order = arm.clone();
            let mut rng = seeding::rng(seeding::derive(spec.seed, tag));
            fisher_yates(&mut order, &mut rng);
            let sizes = part_sizes(arm.len(), &spec.fractions);
            for (p, chunk) in take_parts(&order, &sizes).into_iter().enumerate() {
                merged[p].extend(chunk);
            }
        }
        for p in &mut merged {
            p.sort_unstable();
        }
        merged
    } else {
        split_indices(data.n_rows(), spec)?
    };
    let mut out = Vec::with_capacity(k);
    for indices in parts_idx {
        let data = data.subset(&indices)?;
        out.push(SplitPart { indices, data });
    }
    Ok(out)
}
