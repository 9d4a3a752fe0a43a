//! Tabular ingestion and preprocessing: cleaning, encoding, rare-class
//! grouping, proportional downsampling, correlation injection,
//! mutual-information feature weakening, stratified splitting and
//! standardization. Also a synthetic dataset generator.

mod io;
mod ops;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{NumError, Tensor};

pub use io::{load_csv, write_csv, LoadReport, MISSING_TOKENS};
pub use ops::{
    class_counts, downsample_quotas, group_rare_classes, inject_correlation, inject_correlation_with, mixing_matrix,
    mutual_information, proportional_downsample, standardize, train_test_split, weaken_features, RareGroupReport,
    Scaler,
};
pub use synth::{generate_synthetic, geometric_class_sizes, SyntheticSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column {0:?} not found in header")]
    MissingLabel(String),
    #[error("no rows left after dropping rows with missing values")]
    EmptyAfterCleaning,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Feature matrix with integer labels and the names behind both.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl TabularDataset {
    pub fn new(
        feature_names: Vec<String>,
        features: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(PipelineError::Invalid(format!(
                "features must be a matrix, got {:?}",
                features.shape()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(PipelineError::Invalid(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if labels.len() != features.rows() {
            return Err(PipelineError::Invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(PipelineError::Invalid(format!(
                "label {l} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            feature_names,
            features,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Keeps `rows` (in the given order) and drops classes left empty.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let labels: Vec<usize> = rows.iter().map(|&r| self.labels[r]).collect();
        Self {
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(rows),
            labels,
            class_names: self.class_names.clone(),
        }
        .compact_classes()
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            feature_names: cols.iter().map(|&c| self.feature_names[c].clone()).collect(),
            features: self.features.select_cols(cols),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Removes classes without samples, renumbering the rest in order.
    pub fn compact_classes(mut self) -> Self {
        let counts = class_counts(&self.labels, self.class_names.len());
        if counts.iter().all(|&c| c > 0) {
            return self;
        }
        let mut remap = vec![usize::MAX; counts.len()];
        let mut names = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                remap[c] = names.len();
                names.push(self.class_names[c].clone());
            }
        }
        for l in &mut self.labels {
            *l = remap[*l];
        }
        self.class_names = names;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub target_size: usize,
    pub correlation_level: f64,
    pub mi_keep_fraction: f64,
    pub mi_bins: usize,
    /// Fraction of each class assigned to training.
    pub split_ratio: f64,
    pub rare_class_min_count: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target_size: 5000,
            correlation_level: 0.9,
            mi_keep_fraction: 0.3,
            mi_bins: 16,
            split_ratio: 0.8,
            rare_class_min_count: 50,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio));
        }
        if !(self.mi_keep_fraction > 0.0 && self.mi_keep_fraction <= 1.0) {
            return bad(format!(
                "mi_keep_fraction must lie in (0, 1], got {}",
                self.mi_keep_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.correlation_level) {
            return bad(format!(
                "correlation_level must lie in [0, 1], got {}",
                self.correlation_level
            ));
        }
        if self.mi_bins < 2 {
            return bad(format!("mi_bins must be at least 2, got {}", self.mi_bins));
        }
        if self.target_size == 0 {
            return bad("target_size must be positive".into());
        }
        Ok(())
    }
}

/// Output of [`prepare`]: standardized rows with a stratified split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: TabularDataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub scaler: Scaler,
    pub rare: RareGroupReport,
}

/// Runs the full chain: group rare classes, downsample, inject
/// correlation, weaken features, split, then standardize every row with
/// statistics from the training rows. A dataset already at or below
/// `target_size` is not downsampled.
pub fn prepare(ds: &TabularDataset, cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (grouped, rare) = group_rare_classes(ds, cfg.rare_class_min_count);
    if rare.degenerate {
        log::warn!("every class fell below the rare-class threshold; a single class remains");
    }
    let sampled = if grouped.len() > cfg.target_size {
        proportional_downsample(&grouped, cfg.target_size, cfg.seed)?
    } else {
        grouped
    };
    let mixed = inject_correlation(&sampled, cfg.correlation_level, cfg.seed)?;
    let weakened = weaken_features(&mixed, cfg.mi_keep_fraction, cfg.mi_bins)?;
    let (train_idx, test_idx) = train_test_split(&weakened.labels, cfg.split_ratio, cfg.seed)?;
    let scaler = Scaler::fit(&weakened.features.select_rows(&train_idx))?;
    let mut dataset = weakened;
    dataset.features = scaler.transform(&dataset.features)?;
    Ok(Prepared {
        dataset,
        train_idx,
        test_idx,
        scaler,
        rare,
    })
}
