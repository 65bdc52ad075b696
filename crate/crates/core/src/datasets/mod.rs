//! Synthetic tasks with known ground truth, plus CSV and IDX ingestion.

mod files;

pub use files::{load_csv, load_idx, save_csv};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FansError, Result};
use crate::perturb::DimSubset;
use crate::rng::{task_rng, Domain};

/// Whether rows are flattened images (pixels in `[0, 1]`) or tabular records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Tabular,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub ground_truth: Option<DimSubset>,
    pub kind: DataKind,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, kind: DataKind) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(FansError::Shape {
                what: "label count",
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        if let Some(first) = inputs.first() {
            let d = first.len();
            for (row, x) in inputs.iter().enumerate() {
                if x.len() != d {
                    return Err(FansError::RowLength {
                        row,
                        expected: d,
                        found: x.len(),
                    });
                }
            }
        }
        Ok(Self {
            inputs,
            labels,
            ground_truth: None,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// `max label + 1`, at least 2.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(2, |&m| (m + 1).max(2))
    }
}

/// Labelling rule of the three-feature toy task: class 1 iff `x1 - x2 > 1`.
pub fn example1_label(x: &[f64]) -> usize {
    usize::from(x[0] - x[1] > 1.0)
}

/// Features i.i.d. uniform on `[-2, 2]^3`, labelled by [`example1_label`].
/// The third feature never matters; ground truth is `{0, 1}`.
pub fn gen_example1(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(FansError::Generation("n must be at least 1".into()));
    }
    let mut rng = task_rng(seed, Domain::Generator, 1);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..3).map(|_| rng.random_range(-2.0..=2.0)).collect())
        .collect();
    let labels = inputs.iter().map(|x| example1_label(x)).collect();
    let mut ds = Dataset::new(inputs, labels, DataKind::Tabular)?;
    ds.ground_truth = Some(DimSubset::new(vec![0, 1], 3)?);
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n: usize,
    pub d: usize,
    /// Number of informative coordinates.
    pub k: usize,
    /// Rows with `|w . x| < margin` are rejected.
    pub margin: f64,
    /// Standard deviation of label noise added to the score.
    pub noise: f64,
}

impl PlantedSpec {
    pub fn new(n: usize, d: usize, k: usize) -> Self {
        Self {
            n,
            d,
            k,
            margin: 0.5,
            noise: 0.0,
        }
    }
}

/// A planted-sparse classification task and the generating weights.
#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub dataset: Dataset,
    /// Dense weight vector, non-zero exactly on the ground-truth support.
    pub weights: Vec<f64>,
}

/// Standard-normal features; `k` random coordinates carry weights of
/// magnitude in `[1, 2]` with random sign, label is `w . x + noise > 0`.
pub fn gen_planted_sparse(spec: PlantedSpec, seed: u64) -> Result<PlantedTask> {
    let PlantedSpec { n, d, k, margin, noise } = spec;
    if n == 0 || k == 0 || k >= d {
        return Err(FansError::Generation(format!(
            "need n >= 1 and 1 <= k < d, got n = {n}, k = {k}, d = {d}"
        )));
    }
    if !(margin.is_finite() && margin >= 0.0) || !(noise.is_finite() && noise >= 0.0) {
        return Err(FansError::Generation(format!(
            "margin and noise must be finite and non-negative, got {margin} and {noise}"
        )));
    }
    let mut rng = task_rng(seed, Domain::Generator, 2);
    let mut support = index::sample(&mut rng, d, k).into_vec();
    support.sort_unstable();
    let mut weights = vec![0.0; d];
    for &i in &support {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        weights[i] = sign * rng.random_range(1.0..=2.0);
    }

    let max_attempts = 1000 * n + 1000;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut attempts = 0;
    while inputs.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(FansError::Generation(format!(
                "margin {margin} is infeasible: only {} of {n} rows accepted after {max_attempts} draws",
                inputs.len()
            )));
        }
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let score: f64 = x.iter().zip(&weights).map(|(a, b)| a * b).sum();
        if score.abs() < margin {
            continue;
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        labels.push(usize::from(score + noise * eps > 0.0));
        inputs.push(x);
    }
    let mut dataset = Dataset::new(inputs, labels, DataKind::Tabular)?;
    dataset.ground_truth = Some(DimSubset::new(support, d)?);
    Ok(PlantedTask { dataset, weights })
}
