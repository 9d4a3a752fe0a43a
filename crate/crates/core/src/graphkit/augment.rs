use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{GraphData, GraphError, Result};
use crate::rng::{floor_fraction, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentParams {
    pub edge_rate: f64,
    pub feature_mask_rate: f64,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            edge_rate: 0.1,
            feature_mask_rate: 0.2,
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("edge_rate", self.edge_rate),
            ("feature_mask_rate", self.feature_mask_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(GraphError::Invalid(format!("{name} must lie in [0, 1), got {r}")));
            }
        }
        Ok(())
    }
}

/// Sorted sample of `amount` distinct indices below `len`.
fn sample_sorted(tag: &str, seed: u64, len: usize, amount: usize) -> Vec<usize> {
    let mut rng = stream(seed, tag);
    let mut picked = index::sample(&mut rng, len, amount).into_vec();
    picked.sort_unstable();
    picked
}

/// Appends duplicates of `floor(edge_rate * |E|)` distinct existing edges.
pub fn perturb_edges(g: &GraphData, params: &AugmentParams) -> Result<GraphData> {
    params.validate()?;
    let e = g.num_edges();
    let extra = floor_fraction(params.edge_rate, e);
    let mut out = g.clone();
    out.edge_index.reserve(extra);
    for i in sample_sorted("perturb", params.seed, e, extra) {
        out.edge_index.push(g.edge_index[i]);
    }
    Ok(out)
}

/// The feature columns `mask_features` zeroes, in ascending order.
pub fn choose_mask_columns(d: usize, params: &AugmentParams) -> Vec<usize> {
    sample_sorted("mask", params.seed, d, floor_fraction(params.feature_mask_rate, d))
}

/// Zeroes `floor(feature_mask_rate * d)` distinct feature columns on every node.
pub fn mask_features(g: &GraphData, params: &AugmentParams) -> Result<GraphData> {
    params.validate()?;
    let d = g.num_features();
    if d == 0 {
        return Err(GraphError::Invalid("cannot mask a graph with no features".into()));
    }
    let cols = choose_mask_columns(d, params);
    let mut out = g.clone();
    let data = out.x.data_mut();
    for row in data.chunks_mut(d) {
        for &c in &cols {
            row[c] = 0.0;
        }
    }
    Ok(out)
}
