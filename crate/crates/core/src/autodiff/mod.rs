//! Reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Graph`] is built eagerly for one batch and dropped afterwards.
//! Leaves are either parameters (receive gradients) or constants.

mod graph;
pub mod gradcheck;
mod tensor;

pub use graph::{Gradients, Graph, Node, NodeId, Op};
pub use tensor::Tensor;

pub(crate) use graph::huber;
