//! Minimal differentiable-array core: tensors, reverse-mode graphs,
//! transformer building blocks, losses and Adam.

mod adam;
pub mod functional;
mod graph;
mod layers;
mod linalg;
mod params;
mod tensor;

pub use adam::AdamState;
pub use functional::{bce_loss, ce_loss, dropout, softmax};
pub use graph::{sigmoid, Gradients, Graph, Var, NORM_EPS, PROB_EPS};
pub use layers::{AttentionBlockParams, Encoder, EncoderShape, INIT_STD};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
