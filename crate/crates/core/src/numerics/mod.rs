//! Dense tensors and a minimal reverse-mode differentiation tape.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{Graph, Var};
pub use tensor::{log_add_exp, log_softmax, logsumexp, softmax, Tensor};
