use super::context::GraphContext;
use super::contrastive::{contrastive_loss, PairBank};
use super::layers::{ArmaConv, GatConv, GcnConv, GinConv, Linear, MultiScaleGatConv, SageConv};
use super::spec::{ModelKind, ModelSpec};
use super::{Model, ModelOutput, Result};
use crate::numcore::{Activation, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;

fn activate_unless_last(tape: &mut Tape, h: Var, layer: usize, layers: usize, act: Activation) -> Result<Var> {
    if layer + 1 < layers {
        Ok(tape.activation(h, act)?)
    } else {
        Ok(h)
    }
}

fn widths(spec: &ModelSpec, in_dim: usize, layers: usize) -> Vec<(usize, usize)> {
    (0..layers)
        .map(|l| {
            let fin = if l == 0 { in_dim } else { spec.hidden_dim };
            let fout = if l + 1 == layers {
                spec.output_dim()
            } else {
                spec.hidden_dim
            };
            (fin, fout)
        })
        .collect()
}

macro_rules! store_access {
    () => {
        fn params(&self) -> &ParamStore {
            &self.store
        }

        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.store
        }
    };
}

/// Stack of single-kind convolutions with ReLU between layers.
pub struct ConvStack<L> {
    kind: ModelKind,
    store: ParamStore,
    layers: Vec<L>,
}

pub trait Conv: Send + Sync {
    fn run(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var>;
}

impl Conv for GcnConv {
    fn run(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        self.forward(tape, store, ctx, h)
    }
}

impl Conv for GinConv {
    fn run(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        self.forward(tape, store, ctx, h)
    }
}

impl Conv for SageConv {
    fn run(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        self.forward(tape, store, ctx, h)
    }
}

impl Conv for ArmaConv {
    fn run(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        self.forward(tape, store, ctx, h)
    }
}

/// Graph-blind layers, for the tabular baselines.
impl Conv for Linear {
    fn run(&self, tape: &mut Tape, store: &ParamStore, _ctx: &GraphContext, h: Var) -> Result<Var> {
        self.forward(tape, store, h)
    }
}

impl<L> ConvStack<L> {
    pub fn layers(&self) -> &[L] {
        &self.layers
    }
}

impl ConvStack<GcnConv> {
    pub fn gcn(spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let layers = widths(spec, in_dim, spec.num_layers)
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| GcnConv::new(&mut store, &format!("conv{l}"), i, o, rng))
            .collect();
        Self {
            kind: ModelKind::Gcn,
            store,
            layers,
        }
    }
}

impl ConvStack<GinConv> {
    pub fn gin(spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let layers = widths(spec, in_dim, spec.num_layers)
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| GinConv::new(&mut store, &format!("conv{l}"), i, o, rng))
            .collect();
        Self {
            kind: ModelKind::Gin,
            store,
            layers,
        }
    }
}

impl ConvStack<SageConv> {
    pub fn sage(spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let layers = widths(spec, in_dim, spec.num_layers)
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| SageConv::new(&mut store, &format!("conv{l}"), i, o, rng))
            .collect();
        Self {
            kind: ModelKind::Sage,
            store,
            layers,
        }
    }
}

impl ConvStack<ArmaConv> {
    pub fn arma(spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let layers = widths(spec, in_dim, spec.num_layers)
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| ArmaConv::new(&mut store, &format!("conv{l}"), i, o, spec.arma_stacks, rng))
            .collect();
        Self {
            kind: ModelKind::Arma,
            store,
            layers,
        }
    }
}

impl ConvStack<Linear> {
    pub fn logistic_regression(spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let layers = vec![Linear::new(&mut store, "linear", in_dim, spec.output_dim(), rng)];
        Self {
            kind: ModelKind::LogisticRegression,
            store,
            layers,
        }
    }

    pub fn mlp(spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let layers = widths(spec, in_dim, spec.num_layers)
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| Linear::new(&mut store, &format!("fc{l}"), i, o, rng))
            .collect();
        Self {
            kind: ModelKind::Mlp,
            store,
            layers,
        }
    }
}

impl<L: Conv> Model for ConvStack<L> {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    store_access!();

    fn forward(&self, tape: &mut Tape, ctx: &GraphContext) -> Result<ModelOutput> {
        let mut h = tape.constant(ctx.features().clone());
        let n = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.run(tape, &self.store, ctx, h)?;
            h = activate_unless_last(tape, h, l, n, Activation::Relu)?;
        }
        Ok(ModelOutput {
            logits: h,
            embeddings: None,
        })
    }
}

fn gat_layers(store: &mut ParamStore, prefix: &str, spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Vec<GatConv> {
    let heads = &spec.heads_schedule;
    let mut fin = in_dim;
    let mut out = Vec::with_capacity(heads.len());
    for (l, &h) in heads.iter().enumerate() {
        let last = l + 1 == heads.len();
        let per_head = if last { spec.output_dim() } else { spec.hidden_dim };
        let conv = GatConv::new(store, &format!("{prefix}conv{l}"), fin, per_head, h, !last, rng);
        fin = conv.output_dim();
        out.push(conv);
    }
    out
}

fn run_gat_layers(tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, layers: &[GatConv], h: Var) -> Result<Var> {
    let mut h = h;
    for (l, conv) in layers.iter().enumerate() {
        h = conv.forward(tape, store, ctx, h)?;
        h = activate_unless_last(tape, h, l, layers.len(), Activation::Elu)?;
    }
    Ok(h)
}

/// Attention network: heads concatenated with ELU on hidden layers,
/// averaged on the output layer.
pub struct Gat {
    store: ParamStore,
    pub layers: Vec<GatConv>,
}

impl Gat {
    pub fn new(spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let layers = gat_layers(&mut store, "", spec, in_dim, rng);
        Self { store, layers }
    }
}

impl Model for Gat {
    fn kind(&self) -> ModelKind {
        ModelKind::Gat
    }

    store_access!();

    fn forward(&self, tape: &mut Tape, ctx: &GraphContext) -> Result<ModelOutput> {
        let x = tape.constant(ctx.features().clone());
        let logits = run_gat_layers(tape, &self.store, ctx, &self.layers, x)?;
        Ok(ModelOutput {
            logits,
            embeddings: None,
        })
    }
}

pub struct MultiScaleGat {
    store: ParamStore,
    pub layers: Vec<MultiScaleGatConv>,
}

impl MultiScaleGat {
    pub fn new(spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let heads = &spec.heads_schedule;
        let mut fin = in_dim;
        let mut layers = Vec::with_capacity(heads.len());
        for (l, &h) in heads.iter().enumerate() {
            let last = l + 1 == heads.len();
            let per_head = if last { spec.output_dim() } else { spec.hidden_dim };
            let conv = MultiScaleGatConv::new(
                &mut store,
                &format!("conv{l}"),
                fin,
                per_head,
                h,
                !last,
                &spec.scales,
                rng,
            );
            fin = conv.output_dim();
            layers.push(conv);
        }
        Self { store, layers }
    }
}

impl Model for MultiScaleGat {
    fn kind(&self) -> ModelKind {
        ModelKind::MultiscaleGat
    }

    store_access!();

    fn forward(&self, tape: &mut Tape, ctx: &GraphContext) -> Result<ModelOutput> {
        let mut h = tape.constant(ctx.features().clone());
        for (l, conv) in self.layers.iter().enumerate() {
            h = conv.forward(tape, &self.store, ctx, h)?;
            h = activate_unless_last(tape, h, l, self.layers.len(), Activation::Elu)?;
        }
        Ok(ModelOutput {
            logits: h,
            embeddings: None,
        })
    }
}

/// Contrastive attention network: three attention stages (8, 4, then 1
/// head by default). The second stage's ELU output doubles as the
/// embedding for the contrastive objective.
pub struct Cagn {
    store: ParamStore,
    pub stages: [GatConv; 3],
    margin: f64,
    contrastive_weight: f64,
    pair_capacity: usize,
}

impl Cagn {
    fn stages(store: &mut ParamStore, prefix: &str, spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> [GatConv; 3] {
        let [h1, h2, h3] = spec.cagn_heads;
        let d = spec.hidden_dim;
        let s1 = GatConv::new(store, &format!("{prefix}stage0"), in_dim, d, h1, true, rng);
        let s2 = GatConv::new(store, &format!("{prefix}stage1"), s1.output_dim(), d, h2, true, rng);
        let s3 = GatConv::new(
            store,
            &format!("{prefix}stage2"),
            s2.output_dim(),
            spec.output_dim(),
            h3,
            false,
            rng,
        );
        [s1, s2, s3]
    }

    pub fn new(spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let stages = Self::stages(&mut store, "", spec, in_dim, rng);
        Self {
            store,
            stages,
            margin: spec.margin,
            contrastive_weight: spec.contrastive_weight,
            pair_capacity: spec.pair_capacity,
        }
    }
}

fn run_cagn(
    tape: &mut Tape,
    store: &ParamStore,
    ctx: &GraphContext,
    stages: &[GatConv; 3],
    x: Var,
) -> Result<ModelOutput> {
    let h1 = stages[0].forward(tape, store, ctx, x)?;
    let h1 = tape.relu(h1)?;
    let h2 = stages[1].forward(tape, store, ctx, h1)?;
    let h2 = tape.elu(h2)?;
    let logits = stages[2].forward(tape, store, ctx, h2)?;
    Ok(ModelOutput {
        logits,
        embeddings: Some(h2),
    })
}

fn weighted_contrastive(
    tape: &mut Tape,
    out: &ModelOutput,
    bank: &PairBank,
    margin: f64,
    weight: f64,
) -> Result<Option<Var>> {
    let Some(emb) = out.embeddings else {
        return Ok(None);
    };
    if weight == 0.0 {
        return Ok(None);
    }
    let loss = contrastive_loss(tape, emb, bank, margin)?;
    Ok(Some(tape.scale(loss.value, weight)?))
}

impl Model for Cagn {
    fn kind(&self) -> ModelKind {
        ModelKind::Cagn
    }

    store_access!();

    fn forward(&self, tape: &mut Tape, ctx: &GraphContext) -> Result<ModelOutput> {
        let x = tape.constant(ctx.features().clone());
        run_cagn(tape, &self.store, ctx, &self.stages, x)
    }

    fn pair_capacity(&self) -> Option<usize> {
        (self.contrastive_weight > 0.0).then_some(self.pair_capacity)
    }

    fn auxiliary_loss(&self, tape: &mut Tape, out: &ModelOutput, bank: &PairBank) -> Result<Option<Var>> {
        weighted_contrastive(tape, out, bank, self.margin, self.contrastive_weight)
    }
}

/// Convex blend of a GAT branch and a CAGN branch,
/// `lambda * gat + (1 - lambda) * cagn`, with `lambda = sigmoid(gate)`.
pub struct Fusion {
    store: ParamStore,
    pub gat: Vec<GatConv>,
    pub cagn: [GatConv; 3],
    pub gate: ParamId,
    pinned: Option<f64>,
    margin: f64,
    contrastive_weight: f64,
    pair_capacity: usize,
}

/// Keeps the gate logit finite for initial weights at the endpoints.
const GATE_CLAMP: f64 = 1e-6;

impl Fusion {
    pub fn new(spec: &ModelSpec, in_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let gat = gat_layers(&mut store, "gat.", spec, in_dim, rng);
        let cagn = Cagn::stages(&mut store, "cagn.", spec, in_dim, rng);
        let p = spec.fusion_lambda_init.clamp(GATE_CLAMP, 1.0 - GATE_CLAMP);
        let gate = store.add("gate", Tensor::filled(vec![1], (p / (1.0 - p)).ln()).expect("finite"));
        let pinned = spec.fusion_gate_frozen.then_some(spec.fusion_lambda_init);
        if pinned.is_some() {
            store.set_frozen(gate, true);
        }
        Self {
            store,
            gat,
            cagn,
            gate,
            pinned,
            margin: spec.margin,
            contrastive_weight: spec.contrastive_weight,
            pair_capacity: spec.pair_capacity,
        }
    }

    /// Fixes the gate at `lambda` (used verbatim, not through a sigmoid),
    /// or releases it with `None`.
    pub fn pin_gate(&mut self, lambda: Option<f64>) {
        self.pinned = lambda;
        self.store.set_frozen(self.gate, lambda.is_some());
    }

    /// Current blend weight of the GAT branch.
    pub fn lambda(&self) -> f64 {
        self.pinned
            .unwrap_or_else(|| crate::numcore::Activation::Sigmoid.apply(self.store.get(self.gate).data()[0]))
    }

    /// Logits of the GAT branch and the CAGN branch output, computed on
    /// the same tape.
    pub fn branch_logits(&self, tape: &mut Tape, ctx: &GraphContext) -> Result<(Var, ModelOutput)> {
        let x = tape.constant(ctx.features().clone());
        let gat = run_gat_layers(tape, &self.store, ctx, &self.gat, x)?;
        let cagn = run_cagn(tape, &self.store, ctx, &self.cagn, x)?;
        Ok((gat, cagn))
    }
}

impl Model for Fusion {
    fn kind(&self) -> ModelKind {
        ModelKind::CagnGatFusion
    }

    store_access!();

    fn forward(&self, tape: &mut Tape, ctx: &GraphContext) -> Result<ModelOutput> {
        let (gat, cagn) = self.branch_logits(tape, ctx)?;
        let (lambda, rest) = match self.pinned {
            Some(l) => (
                tape.constant(Tensor::filled(vec![1], l)?),
                tape.constant(Tensor::filled(vec![1], 1.0 - l)?),
            ),
            None => {
                let g = tape.param(&self.store, self.gate);
                let l = tape.sigmoid(g)?;
                let neg = tape.scale(l, -1.0)?;
                (l, tape.add_scalar(neg, 1.0)?)
            }
        };
        let a = tape.scale_by(gat, lambda)?;
        let b = tape.scale_by(cagn.logits, rest)?;
        Ok(ModelOutput {
            logits: tape.add(a, b)?,
            embeddings: cagn.embeddings,
        })
    }

    fn pair_capacity(&self) -> Option<usize> {
        (self.contrastive_weight > 0.0).then_some(self.pair_capacity)
    }

    fn auxiliary_loss(&self, tape: &mut Tape, out: &ModelOutput, bank: &PairBank) -> Result<Option<Var>> {
        weighted_contrastive(tape, out, bank, self.margin, self.contrastive_weight)
    }
}
