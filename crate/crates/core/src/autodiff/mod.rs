//! Minimal reverse-mode differentiation over rank-3 `(batch, channels, length)` tensors.
//!
//! Only the operations the network needs are provided. Convolutions follow the
//! cross-correlation convention. Broadcasting is limited to per-channel bias;
//! any other shape mismatch is an error. Gradients accumulate across calls to
//! [`Graph::backward`], so rebuild the graph (or call [`Graph::zero_grad`]) per step.

mod graph;
mod kernels;
mod tensor;

pub use graph::{BatchNormMode, Graph, RunningStats, Var};
pub use tensor::Tensor;
