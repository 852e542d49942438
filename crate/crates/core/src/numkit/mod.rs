//! Minimal dense numeric kernel: tensors, temporal convolution, reverse-mode
//! gradients and SGD.

mod conv;
mod graph;
mod optim;
mod params;
mod tensor;

pub use conv::temporal_conv;
pub use graph::{activation, sigmoid, top_k_mean_col, top_k_rows, Activation, Graph, NodeId};
pub use optim::{sgd_step, Adam, Optimizer, OptimizerConfig, Sgd};
pub use params::ParamSet;
pub use tensor::Tensor;

/// Runs `build` on a fresh graph over `params` and returns the loss value with
/// gradients for every parameter.
pub fn evaluate_with_gradients<F>(params: &ParamSet, build: F) -> crate::Result<(f64, ParamSet)>
where
    F: FnOnce(&mut Graph<'_>) -> crate::Result<NodeId>,
{
    let mut g = Graph::new(params);
    let loss = build(&mut g)?;
    g.backward(loss)
}
