//! Dense row-major arrays with a tape-based reverse-mode gradient engine.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar output walks the tape in reverse and
//! returns a [`Gradients`] table holding the derivative of that output with
//! respect to every node that requires a gradient.
//!
//! Binary elementwise operations broadcast with trailing-dimension alignment:
//! shapes are right-aligned, and a dimension of size 1 (or a missing leading
//! dimension) stretches to match the other operand.
//!
//! ```
//! use diffcore::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
//! ```

mod check;
mod error;
mod graph;
pub mod gradsuite;
mod real;
mod tensor;

pub use check::{finite_difference, max_relative_error, GradCheck};
pub use error::DiffError;
pub use graph::{Gradients, Graph, Var};
pub use real::Real;
pub use tensor::{broadcast_shapes, Tensor};

pub type Result<T> = std::result::Result<T, DiffError>;
