pub mod data;
pub mod error;
pub mod graph;
pub mod models;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{GradTape, Gradients, LayerGraph, LayerKind, Mode};
pub use tensor::{Element, Tensor};
