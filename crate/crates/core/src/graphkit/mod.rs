//! Feature-similarity graph construction and structural augmentation.

mod augment;
mod construct;
mod io;

use thiserror::Error;

use crate::numcore::{NumError, Tensor};

pub use augment::{choose_mask_columns, mask_features, perturb_edges, AugmentParams};
pub use construct::{
    build_graph, knn_refine, pairwise_distances, threshold_adjacency, Adjacency, ConstructionParams, Metric,
};
pub use io::{read_graph, write_graph};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("row {0} has zero norm; cosine distance is undefined")]
    ZeroNormRow(usize),
    #[error("graph file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// Node features, directed edge pairs, and node labels.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphData {
    pub x: Tensor,
    pub edge_index: Vec<(usize, usize)>,
    pub y: Vec<usize>,
    pub num_classes: usize,
}

impl GraphData {
    pub fn new(x: Tensor, edge_index: Vec<(usize, usize)>, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = x.rows();
        if x.shape().len() != 2 {
            return Err(GraphError::Invalid(format!(
                "features must be a matrix, got {:?}",
                x.shape()
            )));
        }
        if y.len() != n {
            return Err(GraphError::Invalid(format!("{} labels for {n} nodes", y.len())));
        }
        if let Some(&(s, d)) = edge_index.iter().find(|&&(s, d)| s >= n || d >= n) {
            return Err(GraphError::Invalid(format!(
                "edge ({s}, {d}) out of range for {n} nodes"
            )));
        }
        if let Some(&l) = y.iter().find(|&&l| l >= num_classes) {
            return Err(GraphError::Invalid(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            x,
            edge_index,
            y,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_index.len()
    }

    /// True when every directed pair has its reverse present.
    pub fn is_symmetric(&self) -> bool {
        let set: std::collections::HashSet<_> = self.edge_index.iter().copied().collect();
        self.edge_index.iter().all(|&(s, d)| set.contains(&(d, s)))
    }
}
