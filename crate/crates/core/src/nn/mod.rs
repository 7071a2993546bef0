//! Minimal convolutional building blocks with hand-written backward passes.

pub mod graph;
pub mod ops;

pub use graph::{ConvLayer, ConvNet, Node};
pub use ops::Tensor;
