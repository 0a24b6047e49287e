//! Reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it executes. [`Graph::backward`]
//! walks the record in reverse to produce leaf gradients, and
//! [`Graph::grad`] with `create_graph = true` records the gradient
//! computation itself so that it can be differentiated again. The second
//! path covers affine maps, convolutions, pooling (with the forward argmax
//! held fixed), the piecewise-linear activations, sigmoid and elementwise
//! arithmetic, which is everything a discriminator needs for a gradient
//! penalty. Log-softmax, log, sqrt and batch normalization support first-order
//! gradients only.

mod graph;
mod kernels;
mod ops;

pub mod gradcheck;

pub use graph::{Gradients, Graph, Var};
pub use ops::{context_indices, Activation};
