use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Sample};
use crate::error::{invalid, Result};
use crate::seed;

/// Parameters of a Gaussian-cluster classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: Vec<usize>,
    pub dim: usize,
    /// Pairwise distance between class means, in units of the within-class
    /// standard deviation.
    pub separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<LabeledDataset> {
        gen_synthetic(
            self.num_classes,
            &self.per_class,
            self.dim,
            self.separation,
            self.seed,
        )
    }
}

/// Unit-variance Gaussian clusters, one per class.
///
/// Class means are the scaled standard basis vectors `e_0 .. e_{C-1}` under a
/// seeded random rotation, so every pair sits exactly `separation` apart; this
/// needs `num_classes <= dim`. Samples are generated class by class, each
/// class from its own stream, and IDs run `0..N` in generation order. Growing
/// `per_class[c]` therefore only appends samples to class `c`.
pub fn gen_synthetic(
    num_classes: usize,
    per_class: &[usize],
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if per_class.len() != num_classes {
        return Err(invalid(format!(
            "per_class has {} entries for {num_classes} classes",
            per_class.len()
        )));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(invalid("separation must be positive"));
    }
    if num_classes < 2 {
        return Err(invalid("need at least two classes"));
    }
    if dim < num_classes {
        return Err(invalid(format!(
            "dim {dim} cannot hold {num_classes} equidistant class means"
        )));
    }
    let means = class_means(num_classes, dim, separation, seed);
    let mut samples = Vec::with_capacity(per_class.iter().sum());
    let mut next_id = 0u64;
    for (c, (&count, mean)) in per_class.iter().zip(&means).enumerate() {
        let mut rng = seed::derived_rng(seed, &[seed::TAG_SAMPLES, c as u64]);
        for _ in 0..count {
            let features = mean
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push(Sample {
                id: next_id,
                features,
                label: c,
            });
            next_id += 1;
        }
    }
    LabeledDataset::new(num_classes, dim, samples)
}

fn class_means(num_classes: usize, dim: usize, separation: f64, seed: u64) -> Vec<Vec<f64>> {
    let rotation = random_orthonormal(dim, seed::derive(seed, &[seed::TAG_MEANS]));
    let scale = separation / std::f64::consts::SQRT_2;
    // Row c of the rotation is the image of e_c.
    rotation
        .into_iter()
        .take(num_classes)
        .map(|row| row.into_iter().map(|v| v * scale).collect())
        .collect()
}

/// Rows of a random orthonormal matrix (Gram-Schmidt on a Gaussian matrix).
fn random_orthonormal(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        // Degenerate draws are astronomically unlikely; redraw if one happens.
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    rows
}
