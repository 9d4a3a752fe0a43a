//! Dense tensors, reverse-mode differentiation, and optimization.

mod error;
mod gemm;
pub mod memory;
mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{NumError, Result};
pub use optim::{adam_update, cosine_annealing_lr, AdamConfig, AdamState};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tape::{
    activate, cosine_similarity, softmax_rows, Activation, AttentionRecord, EdgeList, Tape, Var, LEAKY_RELU_SLOPE,
};
pub use tensor::Tensor;
