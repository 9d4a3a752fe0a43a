//! Graph neural network layers, the model zoo, and the model registry.

mod context;
mod contrastive;
pub mod layers;
mod models;
mod spec;

use thiserror::Error;

use crate::numcore::{NumError, ParamStore, Tape, Var};
use crate::rng;

pub use context::{exact_hop_edges, mean_norm, symmetric_norm, with_self_loops, GraphContext};
pub use contrastive::{contrastive_loss, ContrastiveLoss, PairBank};
pub use models::{Cagn, Conv, ConvStack, Fusion, Gat, MultiScaleGat};
pub use spec::{ModelKind, ModelSpec};

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("unknown model kind {0:?}; valid kinds: gcn, gat, gin, sage, arma, multiscale_gat, cagn, cagn_gat_fusion, logistic_regression, mlp")]
    UnknownKind(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("node {0} has no incoming edges; attention is undefined")]
    IsolatedNode(usize),
}

pub type Result<T, E = GnnError> = std::result::Result<T, E>;

/// Vars produced by one forward pass over the full graph.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// `[N x out]` class scores.
    pub logits: Var,
    /// Node embeddings used by the contrastive objective, if any.
    pub embeddings: Option<Var>,
}

pub trait Model: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    fn forward(&self, tape: &mut Tape, ctx: &GraphContext) -> Result<ModelOutput>;

    /// Pairs of each kind [`Model::auxiliary_loss`] wants in the
    /// [`PairBank`] drawn each step, or `None` when it uses no bank.
    fn pair_capacity(&self) -> Option<usize> {
        None
    }

    /// Extra weighted loss term added to the classification loss.
    fn auxiliary_loss(&self, _tape: &mut Tape, _out: &ModelOutput, _bank: &PairBank) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// Builds a freshly initialized model for `in_dim` input features. Weights
/// are drawn from a stream keyed by `spec.seed`.
pub fn build_model(spec: &ModelSpec, in_dim: usize) -> Result<Box<dyn Model>> {
    spec.validate()?;
    if in_dim == 0 {
        return Err(GnnError::InvalidSpec("input dimension must be at least 1".into()));
    }
    let mut r = rng::stream(spec.seed, "init");
    let r = &mut r;
    Ok(match spec.kind {
        ModelKind::Gcn => Box::new(ConvStack::gcn(spec, in_dim, r)),
        ModelKind::Gat => Box::new(Gat::new(spec, in_dim, r)),
        ModelKind::Gin => Box::new(ConvStack::gin(spec, in_dim, r)),
        ModelKind::Sage => Box::new(ConvStack::sage(spec, in_dim, r)),
        ModelKind::Arma => Box::new(ConvStack::arma(spec, in_dim, r)),
        ModelKind::MultiscaleGat => Box::new(MultiScaleGat::new(spec, in_dim, r)),
        ModelKind::Cagn => Box::new(Cagn::new(spec, in_dim, r)),
        ModelKind::CagnGatFusion => Box::new(Fusion::new(spec, in_dim, r)),
        ModelKind::LogisticRegression => Box::new(ConvStack::logistic_regression(spec, in_dim, r)),
        ModelKind::Mlp => Box::new(ConvStack::mlp(spec, in_dim, r)),
    })
}
