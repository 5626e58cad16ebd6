//! A small reverse-mode automatic differentiation engine over `ndarray`.
//!
//! Every backward rule is itself built from recorded tensor operations, so
//! gradients can be differentiated again (`grad(.., create_graph = true)`).
//! Training code uses this for penalties on input gradients.

mod conv;
mod graph;
mod ops;
mod tensor;

pub use conv::{conv2d, conv_input_grad, conv_transpose2d, conv_weight_grad, ConvGeometry};
pub use graph::grad;
pub use tensor::{is_grad_enabled, no_grad, with_grad_mode, Array, Tensor};
