//! Dense reverse-mode differentiation, the AdamW optimizer and a
//! finite-difference gradient checker.

mod check;
mod gemm;
mod graph;
mod optim;
mod tensor;

pub use check::{check_against, grad_check, relative_error};
pub use graph::{Graph, Var};
pub(crate) use graph::softmax_in_place;
pub use optim::{AdamWConfig, OptimizerState};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
