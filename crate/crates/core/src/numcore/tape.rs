//! Reverse-mode automatic differentiation over a linear operation record.
//!
//! Forward calls append a node holding the result tensor and the operation
//! that produced it. [`Tape::backward`] walks the nodes in strict reverse
//! order, accumulating vector-Jacobian products into each input.

use std::collections::HashMap;
use std::sync::Arc;

use super::error::{NumError, Result};
use super::gemm::gemm;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Directed edges used by the message-passing primitives. Messages flow
/// from `src[k]` into `dst[k]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeList {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub num_nodes: usize,
}

impl EdgeList {
    pub fn new(num_nodes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut src = Vec::with_capacity(pairs.len());
        let mut dst = Vec::with_capacity(pairs.len());
        for &(s, d) in pairs {
            if s >= num_nodes || d >= num_nodes {
                return Err(NumError::Invalid(format!(
                    "edge ({s}, {d}) out of range for {num_nodes} nodes"
                )));
            }
            src.push(s);
            dst.push(d);
        }
        Ok(Self { src, dst, num_nodes })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn in_degree(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &d in &self.dst {
            deg[d] += 1;
        }
        deg
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src.iter().copied().zip(self.dst.iter().copied())
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    /// ELU with alpha = 1.
    Elu,
    Sigmoid,
}

/// Negative slope used by attention scoring.
pub const LEAKY_RELU_SLOPE: f64 = 0.2;

impl Activation {
    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu(LEAKY_RELU_SLOPE)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Attention coefficients captured during a forward pass, for inspection.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub layer: String,
    pub alpha: Var,
    pub heads: usize,
    pub edges: Arc<EdgeList>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    Activation(Var, Activation),
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    BinaryCrossEntropy {
        logits: Var,
        targets: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    RowCosine {
        a: Var,
        b: Var,
        norms: Vec<(f64, f64)>,
    },
    HeadDot {
        x: Var,
        att: Var,
        heads: usize,
    },
    EdgeScores {
        dst_scores: Var,
        src_scores: Var,
        edges: Arc<EdgeList>,
    },
    SegmentSoftmax {
        scores: Var,
        edges: Arc<EdgeList>,
    },
    Propagate {
        weights: Var,
        x: Var,
        edges: Arc<EdgeList>,
        heads: usize,
    },
    MeanHeads {
        x: Var,
        heads: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    tracks_grad: bool,
}

/// Record of differentiable operations for one forward/backward cycle.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    param_order: Vec<(Var, ParamId)>,
    attention: Vec<AttentionRecord>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn attention_records(&self) -> &[AttentionRecord] {
        &self.attention
    }

    pub fn record_attention(&mut self, layer: impl Into<String>, alpha: Var, heads: usize, edges: Arc<EdgeList>) {
        self.attention.push(AttentionRecord {
            layer: layer.into(),
            alpha,
            heads,
            edges,
        });
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracks_grad = inputs.iter().any(|v| self.nodes[v.0].tracks_grad);
        self.nodes.push(Node { value, op, tracks_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; it participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let tracks_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            tracks_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Records (once per tape) a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let entry = store.entry(id);
        let mut t = entry.tensor.clone();
        t.zero_grad();
        let v = self.leaf(t.with_requires_grad(!entry.frozen));
        self.param_vars.insert(id, v);
        self.param_order.push((v, id));
        v
    }

    /// Copies leaf gradients from the last backward pass into the store.
    /// Parameters that did not influence the loss have their grad cleared.
    pub fn write_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for &(v, id) in &self.param_order {
            let t = store.get_mut(id);
            match self.grad(v) {
                Some(g) => t.set_grad(g.to_vec())?,
                None => t.zero_grad(),
            }
        }
        Ok(())
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let t = Tensor::checked("matmul", vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::checked(op, ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a bias vector (length = column count) to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.cols();
        if tb.numel() != c {
            return Err(shape_err("add_row", tx, tb));
        }
        let b = tb.data();
        let data = tx
            .data()
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(v, bv)| v + bv))
            .collect();
        let t = Tensor::checked("add_row", tx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::checked("scale", tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect())?;
        Ok(self.push(t, Op::Scale(x, c), &[x]))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::checked(
            "add_scalar",
            tx.shape().to_vec(),
            tx.data().iter().map(|v| v + c).collect(),
        )?;
        Ok(self.push(t, Op::AddScalar(x), &[x]))
    }

    /// Multiplies every element of `x` by the single value held in `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if !ts.is_scalar() {
            return Err(shape_err("scale_by", tx, ts));
        }
        let c = ts.item();
        let t = Tensor::checked(
            "scale_by",
            tx.shape().to_vec(),
            tx.data().iter().map(|v| v * c).collect(),
        )?;
        Ok(self.push(t, Op::ScaleBy(x, s), &[x, s]))
    }

    // ---- elementwise nonlinearities -----------------------------------

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        if act == Activation::Identity {
            return Ok(x);
        }
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| act.apply(v)).collect();
        let t = Tensor::checked("activation", tx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Activation(x, act), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Elu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = softmax_rows(self.value(x));
        Ok(self.push(t, Op::SoftmaxRows(x), &[x]))
    }

    // ---- losses and reductions ----------------------------------------

    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (m, c) = (tl.rows(), tl.cols());
        if tl.shape().len() != 2 || labels.len() != m || m == 0 {
            return Err(NumError::ShapeMismatch {
                op: "cross_entropy",
                left: tl.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(NumError::LabelOutOfRange { label: bad, classes: c });
        }
        let probs = softmax_rows(tl);
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = tl.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let t = Tensor::checked("cross_entropy", Vec::new(), vec![total / m as f64])?;
        let probs = probs.data().to_vec();
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy of single-logit rows against 0/1 labels.
    pub fn binary_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.shape().len() != 2 || tl.cols() != 1 || tl.rows() != labels.len() || labels.is_empty() {
            return Err(NumError::ShapeMismatch {
                op: "binary_cross_entropy",
                left: tl.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(NumError::LabelOutOfRange { label: bad, classes: 2 });
        }
        let targets: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let total: f64 = tl
            .data()
            .iter()
            .zip(&targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let t = Tensor::checked("binary_cross_entropy", Vec::new(), vec![total / labels.len() as f64])?;
        Ok(self.push(t, Op::BinaryCrossEntropy { logits, targets }, &[logits]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let t = Tensor::checked("sum", Vec::new(), vec![s])?;
        Ok(self.push(t, Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.numel().max(1) as f64;
        let s: f64 = tx.data().iter().sum();
        let t = Tensor::checked("mean", Vec::new(), vec![s / n])?;
        Ok(self.push(t, Op::Mean(x), &[x]))
    }

    // ---- structural ----------------------------------------------------

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::Invalid("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        for &p in parts {
            let tp = self.value(p);
            if tp.shape().len() != 2 || tp.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), tp));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::from_parts(vec![rows, total], data);
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn gather_rows(&mut self, x: Var, rows: impl Into<Arc<[usize]>>) -> Result<Var> {
        let rows: Arc<[usize]> = rows.into();
        let tx = self.value(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= tx.rows()) {
            return Err(NumError::Invalid(format!(
                "gather_rows: row {bad} out of range for {} rows",
                tx.rows()
            )));
        }
        let t = tx.select_rows(&rows);
        Ok(self.push(t, Op::GatherRows(x, rows), &[x]))
    }

    /// Row-wise cosine similarity of two equally shaped matrices, `[k x 1]`.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || ta.shape().len() != 2 {
            return Err(shape_err("row_cosine", ta, tb));
        }
        let k = ta.rows();
        let mut out = Vec::with_capacity(k);
        let mut norms = Vec::with_capacity(k);
        for r in 0..k {
            let (u, v) = (ta.row(r), tb.row(r));
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(NumError::ZeroNorm);
            }
            let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            out.push(dot / (nu * nv));
            norms.push((nu, nv));
        }
        let t = Tensor::checked("row_cosine", vec![k, 1], out)?;
        Ok(self.push(t, Op::RowCosine { a, b, norms }, &[a, b]))
    }

    // ---- message passing -----------------------------------------------

    /// Per-head dot products: `x` is `[N x heads*F]`, `att` is `[heads x F]`,
    /// result `[N x heads]`.
    pub fn head_dot(&mut self, x: Var, att: Var, heads: usize) -> Result<Var> {
        let (tx, ta) = (self.value(x), self.value(att));
        if heads == 0 || ta.numel() != tx.cols() || ta.numel() % heads != 0 {
            return Err(shape_err("head_dot", tx, ta));
        }
        let f = ta.numel() / heads;
        let n = tx.rows();
        let a = ta.data();
        let mut out = vec![0.0; n * heads];
        for i in 0..n {
            let row = tx.row(i);
            for h in 0..heads {
                out[i * heads + h] = row[h * f..(h + 1) * f]
                    .iter()
                    .zip(&a[h * f..(h + 1) * f])
                    .map(|(p, q)| p * q)
                    .sum();
            }
        }
        let t = Tensor::checked("head_dot", vec![n, heads], out)?;
        Ok(self.push(t, Op::HeadDot { x, att, heads }, &[x, att]))
    }

    /// Per-edge score `dst_scores[dst] + src_scores[src]`, shape `[E x heads]`.
    pub fn edge_scores(&mut self, dst_scores: Var, src_scores: Var, edges: &Arc<EdgeList>) -> Result<Var> {
        let (td, ts) = (self.value(dst_scores), self.value(src_scores));
        if td.shape() != ts.shape() || td.rows() != edges.num_nodes {
            return Err(shape_err("edge_scores", td, ts));
        }
        let h = td.cols();
        let mut out = Vec::with_capacity(edges.len() * h);
        for (s, d) in edges.pairs() {
            let (rd, rs) = (td.row(d), ts.row(s));
            out.extend(rd.iter().zip(rs).map(|(a, b)| a + b));
        }
        let t = Tensor::checked("edge_scores", vec![edges.len(), h], out)?;
        Ok(self.push(
            t,
            Op::EdgeScores {
                dst_scores,
                src_scores,
                edges: Arc::clone(edges),
            },
            &[dst_scores, src_scores],
        ))
    }

    /// Softmax of `[E x heads]` scores over the edges sharing a target node.
    pub fn segment_softmax(&mut self, scores: Var, edges: &Arc<EdgeList>) -> Result<Var> {
        let ts = self.value(scores);
        if ts.rows() != edges.len() || ts.shape().len() != 2 {
            return Err(NumError::ShapeMismatch {
                op: "segment_softmax",
                left: ts.shape().to_vec(),
                right: vec![edges.len()],
            });
        }
        let h = ts.cols();
        let n = edges.num_nodes;
        let e = ts.data();
        let mut max = vec![f64::NEG_INFINITY; n * h];
        for (k, &d) in edges.dst.iter().enumerate() {
            for j in 0..h {
                let m = &mut max[d * h + j];
                *m = m.max(e[k * h + j]);
            }
        }
        let mut out = vec![0.0; e.len()];
        let mut denom = vec![0.0; n * h];
        for (k, &d) in edges.dst.iter().enumerate() {
            for j in 0..h {
                let v = (e[k * h + j] - max[d * h + j]).exp();
                out[k * h + j] = v;
                denom[d * h + j] += v;
            }
        }
        for (k, &d) in edges.dst.iter().enumerate() {
            for j in 0..h {
                out[k * h + j] /= denom[d * h + j];
            }
        }
        let t = Tensor::checked("segment_softmax", vec![edges.len(), h], out)?;
        Ok(self.push(
            t,
            Op::SegmentSoftmax {
                scores,
                edges: Arc::clone(edges),
            },
            &[scores],
        ))
    }

    /// Weighted neighbor aggregation:
    /// `out[dst, h, :] += weights[k, h] * x[src, h, :]` for every edge `k`.
    /// `x` is `[N x heads*F]`, `weights` is `[E x heads]`.
    pub fn propagate(&mut self, weights: Var, x: Var, edges: &Arc<EdgeList>, heads: usize) -> Result<Var> {
        let (tw, tx) = (self.value(weights), self.value(x));
        if heads == 0 || tw.numel() != edges.len() * heads || tx.rows() != edges.num_nodes || !tx.cols().is_multiple_of(heads) {
            return Err(shape_err("propagate", tw, tx));
        }
        let width = tx.cols();
        let f = width / heads;
        let (w, xd) = (tw.data(), tx.data());
        let mut out = vec![0.0; edges.num_nodes * width];
        for (k, (s, d)) in edges.pairs().enumerate() {
            let src_row = &xd[s * width..(s + 1) * width];
            let dst_row = &mut out[d * width..(d + 1) * width];
            for h in 0..heads {
                let c = w[k * heads + h];
                for (o, v) in dst_row[h * f..(h + 1) * f].iter_mut().zip(&src_row[h * f..(h + 1) * f]) {
                    *o += c * v;
                }
            }
        }
        let t = Tensor::checked("propagate", vec![edges.num_nodes, width], out)?;
        Ok(self.push(
            t,
            Op::Propagate {
                weights,
                x,
                edges: Arc::clone(edges),
                heads,
            },
            &[weights, x],
        ))
    }

    /// Averages `heads` equal-width column blocks: `[N x heads*F] -> [N x F]`.
    pub fn mean_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let tx = self.value(x);
        if heads == 0 || !tx.cols().is_multiple_of(heads) {
            return Err(NumError::Invalid(format!(
                "mean_heads: {} columns not divisible by {heads} heads",
                tx.cols()
            )));
        }
        if heads == 1 {
            return Ok(x);
        }
        let f = tx.cols() / heads;
        let n = tx.rows();
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            let row = tx.row(i);
            for h in 0..heads {
                for j in 0..f {
                    out[i * f + j] += row[h * f + j];
                }
            }
        }
        let inv = 1.0 / heads as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let t = Tensor::checked("mean_heads", vec![n, f], out)?;
        Ok(self.push(t, Op::MeanHeads { x, heads }, &[x]))
    }

    // ---- backward -----------------------------------------------------

    /// Back-propagates from a scalar `loss`, populating the grad of every
    /// reachable leaf that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(NumError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.tracks_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((idx, g));
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
        }
        for (idx, g) in leaf_grads {
            self.nodes[idx].value.set_grad(g)?;
        }
        Ok(())
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.tracks_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        Some(slot.get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = self.acc(grads, *a) {
                    gemm(m, n, k, g, false, tb.data(), true, ga, 1.0);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm(k, m, n, ta.data(), true, g, false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(db) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(da) {
                        *x += gi * ai;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                let c = self.value(*x).cols().max(1);
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
                }
            }
            Op::AddScalar(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::ScaleBy(x, s) => {
                let c = self.value(*s).item();
                let xd = self.value(*x).data();
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
                }
                if let Some(gs) = self.acc(grads, *s) {
                    gs[0] += g.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Op::Activation(x, act) => {
                let xd = self.value(*x).data();
                if let Some(gx) = self.acc(grads, *x) {
                    for (((a, gi), xi), yi) in gx.iter_mut().zip(g).zip(xd).zip(out) {
                        *a += gi * act.derivative(*xi, *yi);
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let c = node.value.cols().max(1);
                if let Some(gx) = self.acc(grads, *x) {
                    for ((gxr, gr), yr) in gx.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((a, gi), yi) in gxr.iter_mut().zip(gr).zip(yr) {
                            *a += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / labels.len() as f64;
                if let Some(gl) = self.acc(grads, *logits) {
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            Op::BinaryCrossEntropy { logits, targets } => {
                let z = self.value(*logits).data();
                let scale = g[0] / targets.len() as f64;
                if let Some(gl) = self.acc(grads, *logits) {
                    for ((a, zi), yi) in gl.iter_mut().zip(z).zip(targets) {
                        *a += scale * (sigmoid(*zi) - yi);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel().max(1) as f64;
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0] / n);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = self.acc(grads, p) {
                        for (r, gr) in gp.chunks_mut(w.max(1)).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gr.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += w;
                }
            }
            Op::GatherRows(x, rows) => {
                let c = self.value(*x).cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, &r) in rows.iter().enumerate() {
                        let src = &g[k * c..(k + 1) * c];
                        gx[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::RowCosine { a, b, norms } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = ta.cols();
                // d cos / du = v/(|u||v|) - cos * u/|u|^2
                for (which, other_t, self_t) in [(*a, tb, ta), (*b, ta, tb)] {
                    let is_a = which == *a;
                    if let Some(gw) = self.acc(grads, which) {
                        for (r, &(nu, nv)) in norms.iter().enumerate() {
                            let cos = out[r];
                            let (n_self, n_other) = if is_a { (nu, nv) } else { (nv, nu) };
                            let u = self_t.row(r);
                            let v = other_t.row(r);
                            let inv = 1.0 / (n_self * n_other);
                            let inv_sq = 1.0 / (n_self * n_self);
                            for j in 0..c {
                                gw[r * c + j] += g[r] * (v[j] * inv - cos * u[j] * inv_sq);
                            }
                        }
                    }
                }
            }
            Op::HeadDot { x, att, heads } => {
                let (tx, ta) = (self.value(*x), self.value(*att));
                let h = *heads;
                let f = ta.numel() / h;
                let n = tx.rows();
                let width = tx.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    let a = ta.data();
                    for i in 0..n {
                        for hh in 0..h {
                            let gi = g[i * h + hh];
                            let row = &mut gx[i * width + hh * f..i * width + (hh + 1) * f];
                            row.iter_mut()
                                .zip(&a[hh * f..(hh + 1) * f])
                                .for_each(|(p, q)| *p += gi * q);
                        }
                    }
                }
                if let Some(ga) = self.acc(grads, *att) {
                    for i in 0..n {
                        let row = tx.row(i);
                        for hh in 0..h {
                            let gi = g[i * h + hh];
                            ga[hh * f..(hh + 1) * f]
                                .iter_mut()
                                .zip(&row[hh * f..(hh + 1) * f])
                                .for_each(|(p, q)| *p += gi * q);
                        }
                    }
                }
            }
            Op::EdgeScores {
                dst_scores,
                src_scores,
                edges,
            } => {
                let h = node.value.cols();
                if let Some(gd) = self.acc(grads, *dst_scores) {
                    for (k, &d) in edges.dst.iter().enumerate() {
                        for j in 0..h {
                            gd[d * h + j] += g[k * h + j];
                        }
                    }
                }
                if let Some(gs) = self.acc(grads, *src_scores) {
                    for (k, &s) in edges.src.iter().enumerate() {
                        for j in 0..h {
                            gs[s * h + j] += g[k * h + j];
                        }
                    }
                }
            }
            Op::SegmentSoftmax { scores, edges } => {
                let h = node.value.cols();
                if let Some(gs) = self.acc(grads, *scores) {
                    let mut dot = vec![0.0; edges.num_nodes * h];
                    for (k, &d) in edges.dst.iter().enumerate() {
                        for j in 0..h {
                            dot[d * h + j] += g[k * h + j] * out[k * h + j];
                        }
                    }
                    for (k, &d) in edges.dst.iter().enumerate() {
                        for j in 0..h {
                            gs[k * h + j] += out[k * h + j] * (g[k * h + j] - dot[d * h + j]);
                        }
                    }
                }
            }
            Op::Propagate {
                weights,
                x,
                edges,
                heads,
            } => {
                let (tw, tx) = (self.value(*weights), self.value(*x));
                let width = tx.cols();
                let h = *heads;
                let f = width / h;
                if let Some(gx) = self.acc(grads, *x) {
                    let w = tw.data();
                    for (k, (s, d)) in edges.pairs().enumerate() {
                        let gout = &g[d * width..(d + 1) * width];
                        let gsrc = &mut gx[s * width..(s + 1) * width];
                        for hh in 0..h {
                            let c = w[k * h + hh];
                            for (a, b) in gsrc[hh * f..(hh + 1) * f].iter_mut().zip(&gout[hh * f..(hh + 1) * f]) {
                                *a += c * b;
                            }
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *weights) {
                    let xd = tx.data();
                    for (k, (s, d)) in edges.pairs().enumerate() {
                        let gout = &g[d * width..(d + 1) * width];
                        let xs = &xd[s * width..(s + 1) * width];
                        for hh in 0..h {
                            gw[k * h + hh] += gout[hh * f..(hh + 1) * f]
                                .iter()
                                .zip(&xs[hh * f..(hh + 1) * f])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                }
            }
            Op::MeanHeads { x, heads } => {
                let f = node.value.cols();
                let h = *heads;
                let inv = 1.0 / h as f64;
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, gr) in g.chunks(f.max(1)).enumerate() {
                        for hh in 0..h {
                            let dst = &mut gx[i * h * f + hh * f..i * h * f + (hh + 1) * f];
                            dst.iter_mut().zip(gr).for_each(|(a, b)| *a += b * inv);
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols().max(1);
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut denom = 0.0;
        for v in row {
            let e = (v - max).exp();
            denom += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|v| *v /= denom);
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Elementwise activation outside of any tape.
pub fn activate(x: &Tensor, act: Activation) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| act.apply(v)).collect())
}

/// Cosine similarity of two vectors. Errors only when both are zero; a
/// single zero vector has similarity 0.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(NumError::ShapeMismatch {
            op: "cosine_similarity",
            left: vec![u.len()],
            right: vec![v.len()],
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 && nv == 0.0 {
        return Err(NumError::ZeroNorm);
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}
