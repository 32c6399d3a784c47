//! Minimal tensor and reverse-mode differentiation engine backing the
//! CTU-Net model.

pub mod graph;
pub mod kernels;
pub mod tensor;

pub use graph::{permute_data, Gradients, Graph, Var};
pub use tensor::{softmax_into, Real, Tensor};
