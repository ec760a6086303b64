//! A small, deterministic network kernel set: 64-bit tensors, the layers an
//! encoder-decoder needs (with exact backward passes) and the training losses.

mod loss;
mod network;
pub mod ops;
mod tensor;

pub use loss::{euclidean_loss, weighted_ce_loss, CeForm, PROB_EPS};
pub use network::{
    Architecture, DecoderMode, Gradients, Head, Layer, LayerKind, LayerSpec, Network, ParamGrad, Trace,
};
pub use ops::PoolIndices;
pub use tensor::Tensor;
