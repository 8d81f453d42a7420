//! Dense `f64` tensors, a define-by-run reverse-mode tape, Adam, and a flat
//! checkpoint format.

mod adam;
mod checkpoint;
mod error;
mod graph;
mod params;
mod tensor;

pub mod gradcheck;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use error::{Result, TensorError};
pub use graph::{log_sigmoid, sigmoid, Grads, Graph, Var};
pub use params::{Gradients, Param, ParamStore};
pub use tensor::Tensor;
