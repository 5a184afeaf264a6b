//! Dense tensors, reverse-mode autodiff, Adam, and gradient checking.

mod adam;
mod checkpoint;
pub mod functional;
mod gradcheck;
mod graph;
mod params;
mod real;
mod tensor;

pub use adam::{adam_step, AdamState, FINE_TUNE_LEARNING_RATE};
pub use checkpoint::{Checkpoint, NamedTensor, MAGIC};
pub use functional::{cross_entropy, gelu, layer_norm, softmax};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{weighted_sum, Gradients, Graph, Var};
pub use params::{BoundParams, ParamStore};
pub use real::{Precision, Real};
pub use tensor::{gemm, Tensor};
