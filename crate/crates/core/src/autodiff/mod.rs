//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] records operations as they are applied; [`Graph::backward`]
//! walks the tape once in reverse and returns gradients for every parameter
//! leaf that came from a trainable [`ParamStore`]. Leaves from a frozen store
//! behave as constants.

mod gradcheck;
mod graph;
pub mod kernels;
mod params;

pub use gradcheck::{fd_check, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use params::{AdamConfig, Param, ParamRef, ParamStore};
