//! Compact session-based next-item recommendation.
//!
//! The item embedding table of a self-attention session recommender is replaced
//! by tensor-train cores chained with the left semi-tensor product ([`tt`]).
//! The compressed student is trained against a frozen dense teacher with
//! embedding recombination, an in-batch contrastive task, a predictive task and
//! soft-target distillation ([`kd`]).
//!
//! Everything trainable runs on the small reverse-mode engine in [`autodiff`].
//! Data-parallel kernels use rayon when the `parallel` feature is enabled
//! (the default) and fall back to sequential loops otherwise; see [`par`].

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod kd;
pub mod model;
pub mod par;
pub mod tensor;
pub mod train;
pub mod tt;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
