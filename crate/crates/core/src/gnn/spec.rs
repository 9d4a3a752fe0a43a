use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GnnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gcn,
    Gat,
    Gin,
    Sage,
    Arma,
    MultiscaleGat,
    Cagn,
    CagnGatFusion,
    LogisticRegression,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 10] = [
        ModelKind::Gcn,
        ModelKind::Gat,
        ModelKind::Gin,
        ModelKind::Sage,
        ModelKind::Arma,
        ModelKind::MultiscaleGat,
        ModelKind::Cagn,
        ModelKind::CagnGatFusion,
        ModelKind::LogisticRegression,
        ModelKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Gat => "gat",
            ModelKind::Gin => "gin",
            ModelKind::Sage => "sage",
            ModelKind::Arma => "arma",
            ModelKind::MultiscaleGat => "multiscale_gat",
            ModelKind::Cagn => "cagn",
            ModelKind::CagnGatFusion => "cagn_gat_fusion",
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(
            self,
            ModelKind::Gat | ModelKind::MultiscaleGat | ModelKind::Cagn | ModelKind::CagnGatFusion
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = GnnError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| GnnError::UnknownKind(s.to_string()))
    }
}

/// Declarative model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    /// Number of target classes.
    pub num_classes: usize,
    /// Emit a single logit for two-class problems (sigmoid head).
    pub binary_head: bool,
    /// Layer count for the non-attention models.
    pub num_layers: usize,
    /// Heads per layer of the GAT-style stacks (GAT, multi-scale GAT and
    /// the fusion model's GAT branch).
    pub heads_schedule: Vec<usize>,
    /// Heads of the three contrastive-attention stages.
    pub cagn_heads: [usize; 3],
    pub arma_stacks: usize,
    pub scales: Vec<usize>,
    pub margin: f64,
    pub fusion_lambda_init: f64,
    /// Use `fusion_lambda_init` verbatim and never train the gate.
    pub fusion_gate_frozen: bool,
    pub contrastive_weight: f64,
    /// Positive and negative pairs drawn per epoch, each.
    pub pair_capacity: usize,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gcn,
            hidden_dim: 64,
            num_classes: 2,
            binary_head: false,
            num_layers: 3,
            heads_schedule: vec![2, 1, 1],
            cagn_heads: [8, 4, 1],
            arma_stacks: 2,
            scales: vec![1, 2, 3],
            margin: 0.5,
            fusion_lambda_init: 0.5,
            fusion_gate_frozen: false,
            contrastive_weight: 0.1,
            pair_capacity: 256,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind, num_classes: usize) -> Self {
        Self {
            kind,
            num_classes,
            ..Self::default()
        }
    }

    /// Width of the logit layer.
    pub fn output_dim(&self) -> usize {
        if self.binary_head && self.num_classes == 2 {
            1
        } else {
            self.num_classes
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GnnError::InvalidSpec(msg));
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1".into());
        }
        if self.heads_schedule.is_empty() || self.heads_schedule.contains(&0) {
            return bad(format!(
                "heads_schedule must be nonempty and positive, got {:?}",
                self.heads_schedule
            ));
        }
        if self.cagn_heads.contains(&0) {
            return bad(format!("cagn_heads must be positive, got {:?}", self.cagn_heads));
        }
        if self.arma_stacks == 0 {
            return bad("arma_stacks must be at least 1".into());
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return bad(format!(
                "scales must be nonempty hop counts >= 1, got {:?}",
                self.scales
            ));
        }
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return bad(format!("margin must lie in (0, 1), got {}", self.margin));
        }
        if !(0.0..=1.0).contains(&self.fusion_lambda_init) {
            return bad(format!(
                "fusion_lambda_init must lie in [0, 1], got {}",
                self.fusion_lambda_init
            ));
        }
        if !(self.contrastive_weight >= 0.0 && self.contrastive_weight.is_finite()) {
            return bad(format!(
                "contrastive_weight must be >= 0, got {}",
                self.contrastive_weight
            ));
        }
        Ok(())
    }
}
