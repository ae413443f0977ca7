//! Reverse-mode autodiff, the TDCN family of models and the optimizer.

mod complex;
pub mod gradcheck;
mod graph;
mod ops;
mod models;
mod optim;
mod tdcn;
mod tensor;


pub use complex::MASK_SUM_FLOOR;
#[cfg(test)]
use complex::cholesky_inverse;
pub use graph::{live_nodes, Gradients, Graph, Var};
pub use models::{Separator, VmeModel, VME_INPUTS};
pub use optim::{clip_global_norm, AdamState};
pub use tdcn::{ParamSet, Tdcn, TdcnConfig};
pub use tensor::Tensor;
