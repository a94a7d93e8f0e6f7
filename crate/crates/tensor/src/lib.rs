//! Dense tensors with a tape for reverse-mode differentiation.
//!
//! Values live in plain [`Tensor`]s. Differentiable computation is recorded on
//! a [`Graph`], which hands out [`Var`] handles; ops are methods on the graph
//! and every op validates shapes and rejects non-finite results.

mod element;
mod error;
pub mod gradcheck;
mod graph;
mod ops;
pub mod shape;
mod tensor;

pub use element::{DType, Element};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use ops::conv::Conv2dConfig;
pub use tensor::Tensor;
