use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchError, Result};
use crate::gnn::{GnnError, ModelKind, ModelSpec};
use crate::graphkit::ConstructionParams;
use crate::pipeline::{PipelineConfig, SyntheticSpec};
use crate::trainer::TrainConfig;

/// Environment variable consulted for the seed list when neither the
/// command line nor the config names one.
pub const SEED_ENV: &str = "NIDSGRAPH_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    #[default]
    Off,
    On,
    Both,
}

impl Augmentation {
    /// Augmentation flags to run, unaugmented first.
    pub fn variants(self) -> &'static [bool] {
        match self {
            Augmentation::Off => &[false],
            Augmentation::On => &[true],
            Augmentation::Both => &[false, true],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub name: String,
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

fn default_label_column() -> String {
    "label".to_string()
}

/// A model given either by kind name or as a table of [`ModelSpec`]
/// overrides with a `kind` key and an optional display `name`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelEntry {
    Kind(String),
    Table(toml::Table),
}

impl ModelEntry {
    pub fn kind_name(&self) -> String {
        match self {
            ModelEntry::Kind(k) => k.clone(),
            ModelEntry::Table(t) => t.get("kind").and_then(|v| v.as_str()).unwrap_or("").to_string(),
        }
    }

    /// Name used in result rows.
    pub fn display_name(&self) -> String {
        match self {
            ModelEntry::Table(t) => match t.get("name").and_then(|v| v.as_str()) {
                Some(n) => n.to_string(),
                None => self.kind_name(),
            },
            ModelEntry::Kind(k) => k.clone(),
        }
    }

    /// Resolves to a spec; fails with [`GnnError::UnknownKind`] for an
    /// unrecognized kind and [`GnnError::InvalidSpec`] for bad overrides.
    pub fn to_spec(&self, num_classes: usize, binary_head: bool, seed: u64) -> Result<ModelSpec, GnnError> {
        let kind: ModelKind = self.kind_name().parse()?;
        let mut spec = match self {
            ModelEntry::Kind(_) => ModelSpec::new(kind, num_classes),
            ModelEntry::Table(t) => {
                let mut t = t.clone();
                t.remove("name");
                t.insert("kind".into(), toml::Value::String(kind.name().into()));
                for fixed in ["num_classes", "binary_head", "seed"] {
                    if t.contains_key(fixed) {
                        return Err(GnnError::InvalidSpec(format!("{fixed} is set by the harness")));
                    }
                }
                toml::Value::Table(t)
                    .try_into::<ModelSpec>()
                    .map_err(|e| GnnError::InvalidSpec(e.to_string()))?
            }
        };
        spec.num_classes = num_classes;
        spec.binary_head = binary_head;
        spec.seed = seed;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentRates {
    pub edge_rate: f64,
    pub feature_mask_rate: f64,
}

impl Default for AugmentRates {
    fn default() -> Self {
        Self {
            edge_rate: 0.1,
            feature_mask_rate: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Markdown,
    Csv,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub format: OutputFormat,
    /// Written to standard output when absent.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSource>,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub augmentation: Augmentation,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub graph: ConstructionParams,
    #[serde(default)]
    pub augment: AugmentRates,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_jobs() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Loads a config file; relative dataset paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for ds in &mut cfg.datasets {
            if let Some(p) = &ds.csv_path {
                if p.is_relative() {
                    ds.csv_path = Some(base.join(p));
                }
            }
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked before running. Unknown model
    /// kinds are not errors (their cells become error rows); they are
    /// returned as warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.datasets.is_empty() {
            return bad("at least one dataset is required".into());
        }
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return bad("seeds must not be empty".into());
            }
        }
        let mut names = std::collections::HashSet::new();
        for ds in &self.datasets {
            if !names.insert(ds.name.as_str()) {
                return bad(format!("duplicate dataset name {:?}", ds.name));
            }
            match (&ds.csv_path, &ds.synthetic) {
                (Some(p), None) => {
                    if !p.is_file() {
                        return bad(format!("dataset {:?}: file {} does not exist", ds.name, p.display()));
                    }
                }
                (None, Some(s)) => {
                    if s.classes < 2 || s.features < 2 || s.samples < 2 * s.classes {
                        return bad(format!("dataset {:?}: synthetic spec is too small", ds.name));
                    }
                }
                _ => {
                    return bad(format!(
                        "dataset {:?} needs exactly one of csv_path or synthetic",
                        ds.name
                    ))
                }
            }
        }
        self.pipeline
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if !(self.graph.tau > 0.0) || self.graph.k == 0 {
            return bad("graph.tau must be positive and graph.k at least 1".into());
        }
        for (name, r) in [
            ("edge_rate", self.augment.edge_rate),
            ("feature_mask_rate", self.augment.feature_mask_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("augment.{name} must lie in [0, 1), got {r}"));
            }
        }
        let mut warnings = Vec::new();
        let mut labels = std::collections::HashSet::new();
        for m in &self.models {
            if !labels.insert(m.display_name()) {
                return bad(format!("duplicate model name {:?}", m.display_name()));
            }
            match m.to_spec(3, false, 0) {
                Ok(_) => {}
                Err(GnnError::UnknownKind(k)) => {
                    warnings.push(format!("unknown model kind {k:?}; its cells will fail"))
                }
                Err(e) => return bad(format!("model {:?}: {e}", m.display_name())),
            }
        }
        Ok(warnings)
    }

    /// Seeds to run: `cli` beats the config, which beats [`SEED_ENV`];
    /// the fallback is seed 0.
    pub fn resolve_seeds(&self, cli: Option<u64>, env: Option<&str>) -> Result<Vec<u64>> {
        if let Some(s) = cli {
            return Ok(vec![s]);
        }
        if let Some(s) = &self.seeds {
            return Ok(s.clone());
        }
        match env {
            Some(v) => v
                .trim()
                .parse()
                .map(|s| vec![s])
                .map_err(|_| BenchError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            None => Ok(vec![0]),
        }
    }
}
