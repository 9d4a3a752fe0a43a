use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use super::Result;
use crate::graphkit::GraphData;
use crate::numcore::{EdgeList, Tensor};

/// Graph structure and the per-graph constants the layers need, computed
/// once and shared by every forward pass.
pub struct GraphContext {
    x: Tensor,
    raw: Arc<EdgeList>,
    looped: Arc<EdgeList>,
    gcn_weights: Tensor,
    mean_weights: Tensor,
    ones: Tensor,
    hops: Mutex<HashMap<usize, Arc<EdgeList>>>,
}

/// Drops existing self-loops and appends exactly one per node.
pub fn with_self_loops(edges: &EdgeList) -> EdgeList {
    let mut pairs: Vec<(usize, usize)> = edges.pairs().filter(|&(s, d)| s != d).collect();
    pairs.extend((0..edges.num_nodes).map(|i| (i, i)));
    EdgeList::new(edges.num_nodes, &pairs).expect("endpoints already validated")
}

/// Symmetric normalization `deg^-1/2[src] * deg^-1/2[dst]` per edge, with
/// degrees counted at the target (multiplicities included).
pub fn symmetric_norm(edges: &EdgeList) -> Tensor {
    let inv_sqrt: Vec<f64> = edges
        .in_degree()
        .into_iter()
        .map(|d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect();
    let w = edges.pairs().map(|(s, d)| inv_sqrt[s] * inv_sqrt[d]).collect();
    Tensor::new(vec![edges.len(), 1], w).expect("finite weights")
}

/// `1 / in_degree(dst)` per edge, so propagation yields a neighbor mean.
pub fn mean_norm(edges: &EdgeList) -> Tensor {
    let deg = edges.in_degree();
    let w = edges.dst.iter().map(|&d| 1.0 / deg[d] as f64).collect();
    Tensor::new(vec![edges.len(), 1], w).expect("finite weights")
}

/// Exact `hops`-hop in-neighbors of every node (shortest path length equals
/// `hops`), deduplicated, followed by one self-loop per node.
pub fn exact_hop_edges(edges: &EdgeList, hops: usize) -> EdgeList {
    let n = edges.num_nodes;
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, d) in edges.pairs() {
        if s != d {
            incoming[d].push(s);
        }
    }
    for list in &mut incoming {
        list.sort_unstable();
        list.dedup();
    }
    let mut pairs = Vec::new();
    let mut dist = vec![usize::MAX; n];
    let mut touched = Vec::new();
    let mut queue = VecDeque::new();
    for v in 0..n {
        dist[v] = 0;
        touched.push(v);
        queue.push_back(v);
        let mut ring = Vec::new();
        while let Some(u) = queue.pop_front() {
            if dist[u] == hops {
                ring.push(u);
                continue;
            }
            for &w in &incoming[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    touched.push(w);
                    queue.push_back(w);
                }
            }
        }
        ring.sort_unstable();
        pairs.extend(ring.into_iter().filter(|&u| u != v).map(|u| (u, v)));
        for t in touched.drain(..) {
            dist[t] = usize::MAX;
        }
    }
    pairs.extend((0..n).map(|i| (i, i)));
    EdgeList::new(n, &pairs).expect("endpoints already validated")
}

impl GraphContext {
    pub fn new(x: Tensor, edges: EdgeList) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != edges.num_nodes {
            return Err(super::GnnError::InvalidSpec(format!(
                "features {:?} do not match {} nodes",
                x.shape(),
                edges.num_nodes
            )));
        }
        let looped = with_self_loops(&edges);
        let gcn_weights = symmetric_norm(&looped);
        let mean_weights = mean_norm(&edges);
        let ones = Tensor::filled(vec![edges.len(), 1], 1.0)?;
        Ok(Self {
            x,
            raw: Arc::new(edges),
            looped: Arc::new(looped),
            gcn_weights,
            mean_weights,
            ones,
            hops: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_graph(g: &GraphData) -> Result<Self> {
        let edges = EdgeList::new(g.num_nodes(), &g.edge_index)?;
        Self::new(g.x.clone(), edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.raw.num_nodes
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.x
    }

    /// Edges exactly as given.
    pub fn edges(&self) -> &Arc<EdgeList> {
        &self.raw
    }

    /// Edges with one self-loop per node.
    pub fn looped_edges(&self) -> &Arc<EdgeList> {
        &self.looped
    }

    pub fn gcn_weights(&self) -> &Tensor {
        &self.gcn_weights
    }

    pub fn mean_weights(&self) -> &Tensor {
        &self.mean_weights
    }

    pub fn unit_weights(&self) -> &Tensor {
        &self.ones
    }

    /// Attention edges for one scale: the looped edge list for one hop,
    /// exact-hop neighborhoods plus self-loops beyond that. Cached.
    pub fn scale_edges(&self, hops: usize) -> Arc<EdgeList> {
        if hops <= 1 {
            return Arc::clone(&self.looped);
        }
        let mut cache = self.hops.lock().unwrap_or_else(|e| e.into_inner());
        Arc::clone(
            cache
                .entry(hops)
                .or_insert_with(|| Arc::new(exact_hop_edges(&self.raw, hops))),
        )
    }
}
