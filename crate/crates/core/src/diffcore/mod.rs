//! Dense tensors and a small reverse-mode autodiff graph.

mod graph;
mod tensor;

pub mod check;

pub use graph::{Graph, Var, NORM_EPS};
pub use tensor::Tensor;
