//! Graph convolution layers. Each layer owns parameter handles into the
//! model's [`ParamStore`]; activations are applied by the enclosing model.

use std::sync::Arc;

use rand::Rng as _;

use super::context::GraphContext;
use super::{GnnError, Result};
use crate::numcore::{EdgeList, ParamId, ParamStore, Tape, Tensor, Var, LEAKY_RELU_SLOPE};
use crate::rng::Rng;

/// Uniform Glorot initialization: `U(-a, a)` with `a = sqrt(6 / (rows + cols))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::new(vec![rows, cols], data).expect("finite init")
}

/// Affine map `h W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), glorot(fan_in, fan_out, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let hw = tape.matmul(h, w)?;
        Ok(tape.add_row(hw, b)?)
    }
}

/// Symmetric-normalized convolution over the self-looped graph.
#[derive(Clone, Debug)]
pub struct GcnConv {
    pub lin: Linear,
}

impl GcnConv {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            lin: Linear::new(store, name, fan_in, fan_out, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        let w = tape.param(store, self.lin.weight);
        let b = tape.param(store, self.lin.bias);
        let hw = tape.matmul(h, w)?;
        let norm = tape.constant(ctx.gcn_weights().clone());
        let agg = tape.propagate(norm, hw, ctx.looped_edges(), 1)?;
        Ok(tape.add_row(agg, b)?)
    }
}

/// Multi-head additive attention convolution.
#[derive(Clone, Debug)]
pub struct GatConv {
    pub weight: ParamId,
    pub att_src: ParamId,
    pub att_dst: ParamId,
    pub bias: ParamId,
    pub heads: usize,
    pub out_per_head: usize,
    /// Concatenate heads (hidden layers) or average them (output layer).
    pub concat: bool,
    pub name: String,
}

impl GatConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        out_per_head: usize,
        heads: usize,
        concat: bool,
        rng: &mut Rng,
    ) -> Self {
        let width = heads * out_per_head;
        let out = if concat { width } else { out_per_head };
        Self {
            weight: store.add(format!("{name}.weight"), glorot(fan_in, width, rng)),
            att_src: store.add(format!("{name}.att_src"), glorot(heads, out_per_head, rng)),
            att_dst: store.add(format!("{name}.att_dst"), glorot(heads, out_per_head, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![out])),
            heads,
            out_per_head,
            concat,
            name: name.to_string(),
        }
    }

    pub fn output_dim(&self) -> usize {
        if self.concat {
            self.heads * self.out_per_head
        } else {
            self.out_per_head
        }
    }

    /// Attention coefficients `[E x heads]` over `edges`, plus the
    /// transformed features they weight.
    pub fn attention(&self, tape: &mut Tape, store: &ParamStore, h: Var, edges: &Arc<EdgeList>) -> Result<(Var, Var)> {
        if let Some(node) = edges.in_degree().iter().position(|&d| d == 0) {
            return Err(GnnError::IsolatedNode(node));
        }
        let w = tape.param(store, self.weight);
        let a_src = tape.param(store, self.att_src);
        let a_dst = tape.param(store, self.att_dst);
        let hw = tape.matmul(h, w)?;
        let s_src = tape.head_dot(hw, a_src, self.heads)?;
        let s_dst = tape.head_dot(hw, a_dst, self.heads)?;
        let scores = tape.edge_scores(s_dst, s_src, edges)?;
        let scores = tape.leaky_relu(scores, LEAKY_RELU_SLOPE)?;
        let alpha = tape.segment_softmax(scores, edges)?;
        tape.record_attention(self.name.clone(), alpha, self.heads, Arc::clone(edges));
        Ok((alpha, hw))
    }

    pub fn forward_on(&self, tape: &mut Tape, store: &ParamStore, h: Var, edges: &Arc<EdgeList>) -> Result<Var> {
        let (alpha, hw) = self.attention(tape, store, h, edges)?;
        let mut out = tape.propagate(alpha, hw, edges, self.heads)?;
        if !self.concat {
            out = tape.mean_heads(out, self.heads)?;
        }
        let b = tape.param(store, self.bias);
        Ok(tape.add_row(out, b)?)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        self.forward_on(tape, store, h, ctx.looped_edges())
    }
}

/// Sum aggregation with a learnable self-weight `1 + eps`, followed by a
/// two-layer perceptron.
#[derive(Clone, Debug)]
pub struct GinConv {
    pub eps: ParamId,
    pub first: Linear,
    pub second: Linear,
}

impl GinConv {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            eps: store.add(format!("{name}.eps"), Tensor::zeros(vec![1])),
            first: Linear::new(store, &format!("{name}.mlp0"), fan_in, fan_out, rng),
            second: Linear::new(store, &format!("{name}.mlp1"), fan_out, fan_out, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        let ones = tape.constant(ctx.unit_weights().clone());
        let agg = tape.propagate(ones, h, ctx.edges(), 1)?;
        let eps = tape.param(store, self.eps);
        let scaled = tape.scale_by(h, eps)?;
        let own = tape.add(h, scaled)?;
        let z = tape.add(own, agg)?;
        let z = self.first.forward(tape, store, z)?;
        let z = tape.relu(z)?;
        self.second.forward(tape, store, z)
    }
}

/// `W [h_v || mean_{u in N(v)} h_u] + b`; an empty neighborhood averages to zero.
#[derive(Clone, Debug)]
pub struct SageConv {
    pub lin: Linear,
}

impl SageConv {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            lin: Linear::new(store, name, 2 * fan_in, fan_out, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        let w = tape.constant(ctx.mean_weights().clone());
        let mean = tape.propagate(w, h, ctx.edges(), 1)?;
        let cat = tape.concat_cols(&[h, mean])?;
        self.lin.forward(tape, store, cat)
    }
}

/// Sum of `K` independently weighted propagations sharing the
/// symmetric-normalized self-looped operator.
#[derive(Clone, Debug)]
pub struct ArmaConv {
    pub stacks: Vec<ParamId>,
    pub bias: ParamId,
}

impl ArmaConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        stacks: usize,
        rng: &mut Rng,
    ) -> Self {
        Self {
            stacks: (0..stacks)
                .map(|k| store.add(format!("{name}.stack{k}"), glorot(fan_in, fan_out, rng)))
                .collect(),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        let norm = tape.constant(ctx.gcn_weights().clone());
        let mut total: Option<Var> = None;
        for &id in &self.stacks {
            let w = tape.param(store, id);
            let hw = tape.matmul(h, w)?;
            let p = tape.propagate(norm, hw, ctx.looped_edges(), 1)?;
            total = Some(match total {
                Some(t) => tape.add(t, p)?,
                None => p,
            });
        }
        let b = tape.param(store, self.bias);
        Ok(tape.add_row(total.expect("at least one stack"), b)?)
    }
}

/// One GAT convolution per hop scale, mixed by learnable scalar weights
/// that start uniform.
#[derive(Clone, Debug)]
pub struct MultiScaleGatConv {
    pub scales: Vec<usize>,
    pub convs: Vec<GatConv>,
    pub mix: Vec<ParamId>,
}

impl MultiScaleGatConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        out_per_head: usize,
        heads: usize,
        concat: bool,
        scales: &[usize],
        rng: &mut Rng,
    ) -> Self {
        let w0 = 1.0 / scales.len() as f64;
        let convs = scales
            .iter()
            .map(|s| {
                GatConv::new(
                    store,
                    &format!("{name}.hop{s}"),
                    fan_in,
                    out_per_head,
                    heads,
                    concat,
                    rng,
                )
            })
            .collect();
        let mix = scales
            .iter()
            .map(|s| store.add(format!("{name}.mix{s}"), Tensor::filled(vec![1], w0).expect("finite")))
            .collect();
        Self {
            scales: scales.to_vec(),
            convs,
            mix,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.convs[0].output_dim()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        let mut total: Option<Var> = None;
        for ((&s, conv), &mix) in self.scales.iter().zip(&self.convs).zip(&self.mix) {
            let edges = ctx.scale_edges(s);
            let out = conv.forward_on(tape, store, h, &edges)?;
            let w = tape.param(store, mix);
            let out = tape.scale_by(out, w)?;
            total = Some(match total {
                Some(t) => tape.add(t, out)?,
                None => out,
            });
        }
        Ok(total.expect("at least one scale"))
    }
}
