use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{GraphData, GraphError, Result};
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(x_i, x_j)`
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructionParams {
    pub metric: Metric,
    /// Pairs strictly closer than `tau` are connected.
    pub tau: f64,
    /// Neighbors per node added by the KNN pass.
    pub k: usize,
    pub include_self_loops: bool,
}

impl Default for ConstructionParams {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            tau: 0.5,
            k: 5,
            include_self_loops: false,
        }
    }
}

/// Dense symmetric boolean adjacency matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.bits[i * self.n + j] = on;
    }

    pub fn degree(&self, i: usize) -> usize {
        self.bits[i * self.n..(i + 1) * self.n].iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Directed pairs in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// True when every edge of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &Adjacency) -> bool {
        self.n == other.n && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

fn row_norms(x: &Tensor) -> Vec<f64> {
    (0..x.rows())
        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Distance between rows `i` and `j`; exactly symmetric in its arguments.
fn distance(metric: Metric, x: &Tensor, norms: &[f64], i: usize, j: usize) -> f64 {
    if i == j {
        return 0.0;
    }
    let (a, b) = (x.row(i), x.row(j));
    match metric {
        Metric::Euclidean => a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt(),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            1.0 - dot / (norms[i] * norms[j])
        }
    }
}

fn check_cosine_rows(metric: Metric, norms: &[f64]) -> Result<()> {
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|&n| n == 0.0) {
            return Err(GraphError::ZeroNormRow(i));
        }
    }
    Ok(())
}

pub fn pairwise_distances(x: &Tensor, metric: Metric) -> Result<Tensor> {
    let n = x.rows();
    if n == 0 || x.shape().len() != 2 {
        return Err(GraphError::Invalid("pairwise distances need a non-empty matrix".into()));
    }
    let norms = row_norms(x);
    check_cosine_rows(metric, &norms)?;
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = distance(metric, x, &norms, i, j);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(Tensor::new(vec![n, n], d)?)
}

pub fn threshold_adjacency(d: &Tensor, tau: f64) -> Adjacency {
    let n = d.rows();
    let mut a = Adjacency::empty(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && d.get(i, j) < tau {
                a.set(i, j, true);
            }
        }
    }
    a
}

/// Total order on candidate neighbors: distance, then index.
fn by_distance(row: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b))
}

/// The `k` nearest rows to `i` (excluding `i`), ties broken by lower index.
fn nearest(row: &[f64], i: usize, k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_distance(row));
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_distance(row));
    cand
}

/// Union of `a` with the symmetrized k-nearest-neighbor graph of `d`.
pub fn knn_refine(d: &Tensor, a: &Adjacency, k: usize) -> Result<Adjacency> {
    let n = d.rows();
    if k == 0 || k >= n {
        return Err(GraphError::Invalid(format!(
            "k must satisfy 1 <= k < N, got k={k}, N={n}"
        )));
    }
    if a.len() != n {
        return Err(GraphError::Invalid(format!(
            "adjacency has {} nodes, distances {n}",
            a.len()
        )));
    }
    let mut out = a.clone();
    for i in 0..n {
        for j in nearest(d.row(i), i, k) {
            out.set(i, j, true);
            out.set(j, i, true);
        }
    }
    Ok(out)
}

/// Threshold plus KNN graph over the rows of `x`.
///
/// Distances are computed one row at a time, so memory stays linear in the
/// node count. `k` is clamped to `N - 1`.
pub fn build_graph(x: &Tensor, y: &[usize], params: &ConstructionParams) -> Result<GraphData> {
    let n = x.rows();
    if y.len() != n {
        return Err(GraphError::Invalid(format!("{} labels for {n} rows", y.len())));
    }
    if n == 0 {
        return Err(GraphError::Invalid("cannot build a graph with no nodes".into()));
    }
    if !(params.tau > 0.0) {
        return Err(GraphError::Invalid(format!("tau must be positive, got {}", params.tau)));
    }
    if params.k == 0 {
        return Err(GraphError::Invalid("k must be at least 1".into()));
    }
    let norms = row_norms(x);
    check_cosine_rows(params.metric, &norms)?;
    let k = params.k.min(n - 1);
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = distance(params.metric, x, &norms, i, j);
        }
        for (j, &dist) in row.iter().enumerate() {
            if j != i && dist < params.tau {
                neighbors[i].push(j);
            }
        }
        for j in nearest(&row, i, k) {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
    }
    let mut edges = Vec::new();
    for (i, list) in neighbors.iter_mut().enumerate() {
        list.sort_unstable();
        list.dedup();
        edges.extend(list.iter().map(|&j| (i, j)));
    }
    if params.include_self_loops {
        edges.extend((0..n).map(|i| (i, i)));
    }
    let num_classes = y.iter().max().map_or(1, |m| m + 1);
    GraphData::new(x.clone(), edges, y.to_vec(), num_classes)
}
