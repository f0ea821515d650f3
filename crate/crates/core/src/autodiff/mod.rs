//! Dense tensors with tape-based reverse-mode differentiation.

mod graph;
mod tape;
mod tensor;

pub use graph::{Eval, Graph, Unary};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::sigmoid;
