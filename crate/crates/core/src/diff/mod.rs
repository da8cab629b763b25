//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheck, REL_FLOOR};
pub use graph::{Gradients, Graph, Primitive, Var};
pub use tensor::Tensor;
