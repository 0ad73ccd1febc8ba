//! Small reverse-mode differentiation engine for convolutional networks.
//!
//! Everything runs on the CPU in a fixed order, so results are bitwise
//! reproducible for a given scalar type.

mod conv;
mod float;
mod graph;
mod optim;
mod params;
mod tensor;

pub use float::{DType, Float};
pub use graph::{sigmoid, Gradients, Graph, NodeId, Window};
pub use optim::{Adam, AdamConfig};
pub use params::ParamSet;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
}
