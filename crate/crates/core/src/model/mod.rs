//! Self-attention session encoder shared by teacher and student.
//!
//! A session of item ids is embedded (item table plus position table), passed
//! through causal self-attention blocks, and pooled into a single vector by a
//! soft-attention readout. Scores are inner products with every item
//! embedding. Teacher and student differ only in how the item table is
//! stored: a dense parameter or a set of factorized cores.

mod config;
mod loss;
mod network;
mod predictor;

pub use config::ModelConfig;
pub use loss::{rec_loss, rec_loss_value};
pub use network::{Bound, SeqModel};
pub use predictor::Predictor;
