//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod attention;
mod exact_sum;
mod graph;
pub mod ops;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use attention::{attention, attention_backward, AttentionMask};
pub use exact_sum::ExactSum;
pub use graph::{dot, Gradients, Graph, Var};
pub use tensor::Tensor;
