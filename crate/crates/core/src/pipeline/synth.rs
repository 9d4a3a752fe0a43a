use std::collections::HashSet;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{PipelineError, Result, TabularDataset};
use crate::numcore::Tensor;
use crate::rng::stream;

/// Parameters of [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub classes: usize,
    pub features: usize,
    pub separation: f64,
    pub imbalance: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            samples: 5000,
            classes: 5,
            features: 20,
            separation: 4.0,
            imbalance: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<TabularDataset> {
        generate_synthetic(
            self.samples,
            self.classes,
            self.features,
            self.separation,
            self.imbalance,
            self.seed,
        )
    }
}

/// Class sizes proportional to `imbalance^c`, rounded by largest remainder
/// so they sum to `total`.
pub fn geometric_class_sizes(total: usize, classes: usize, imbalance: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..classes).map(|c| imbalance.powi(c as i32)).collect();
    let sum: f64 = weights.iter().sum();
    let real: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut sizes: Vec<usize> = real.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| {
        (real[b] - sizes[b] as f64)
            .total_cmp(&(real[a] - sizes[a] as f64))
            .then(a.cmp(&b))
    });
    let short = total - sizes.iter().sum::<usize>();
    for &c in order.iter().take(short) {
        sizes[c] += 1;
    }
    sizes
}

/// Gaussian blobs (unit variance) around distinct hypercube vertices with
/// coordinates `+-separation/2`, one per class. Rows are grouped by class.
pub fn generate_synthetic(
    num_samples: usize,
    num_classes: usize,
    d: usize,
    class_separation: f64,
    imbalance: f64,
    seed: u64,
) -> Result<TabularDataset> {
    if num_classes < 2 || d < 2 {
        return Err(PipelineError::Config(
            "synthetic data needs at least 2 classes and 2 features".into(),
        ));
    }
    if d < 64 && num_classes > 1usize << d {
        return Err(PipelineError::Config(format!(
            "{d} features cannot place {num_classes} distinct centers"
        )));
    }
    if !(imbalance > 0.0 && imbalance <= 1.0) {
        return Err(PipelineError::Config(format!(
            "imbalance must lie in (0, 1], got {imbalance}"
        )));
    }
    if !(class_separation >= 0.0 && class_separation.is_finite()) {
        return Err(PipelineError::Config(format!(
            "separation must be >= 0, got {class_separation}"
        )));
    }
    let mut rng = stream(seed, "synthetic");
    let half = class_separation / 2.0;
    let mut seen = HashSet::new();
    let mut centers = Vec::with_capacity(num_classes);
    while centers.len() < num_classes {
        let signs: Vec<bool> = (0..d).map(|_| rng.random()).collect();
        if seen.insert(signs.clone()) {
            centers.push(
                signs
                    .into_iter()
                    .map(|s| if s { half } else { -half })
                    .collect::<Vec<f64>>(),
            );
        }
    }
    let sizes = geometric_class_sizes(num_samples, num_classes, imbalance);
    let mut data = Vec::with_capacity(num_samples * d);
    let mut labels = Vec::with_capacity(num_samples);
    for (c, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            data.extend(centers[c].iter().map(|&m| m + rng.sample::<f64, _>(StandardNormal)));
            labels.push(c);
        }
    }
    let features = Tensor::new(vec![num_samples, d], data)?;
    let feature_names = (0..d).map(|j| format!("f{j}")).collect();
    let class_names = (0..num_classes).map(|c| format!("class{c}")).collect();
    TabularDataset::new(feature_names, features, labels, class_names)
}
