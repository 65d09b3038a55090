//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! Just enough primitives to train every ranking architecture and loss in
//! this crate: matmul, broadcasting adds, elementwise maps, reductions,
//! max-with-argmax, softmax, layer norm, embedding lookup, concatenation,
//! slicing, cosine similarity, and Gaussian kernel activations.

pub mod gradcheck;
pub mod graph;
pub mod math;
pub mod tensor;

pub use gradcheck::finite_diff_check;
pub use graph::{Graph, TapeError, Var};
pub use tensor::Tensor;
