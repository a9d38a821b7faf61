//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod check;
mod graph;
mod tensor;

pub use check::{grad_check, grad_check_many, GradCheckReport};
pub use graph::{log_sum_exp, sigmoid, softmax_rows, Elementwise, Graph, Var};
pub use tensor::Tensor;
