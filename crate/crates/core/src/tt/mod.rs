//! Tensor-train embedding tables.
//!
//! An item embedding table of `|V| x N` entries is replaced by `d` small cores.
//! Item index `i` is split into a mixed-radix multi-index over `item_factors`,
//! and the embedding dimension into `dim_factors`. With plain tensor-train
//! cores (TTD) the per-item slices are chained with ordinary matrix products;
//! with semi-tensor-product cores (STTD) every core after the first is `n`
//! times thinner on its left rank and `n` times shorter on its middle extent,
//! and the chain uses the left semi-tensor product instead.

mod cores;
mod report;
mod shape;
mod stp;

pub use cores::{CoreGeom, CoreSet};
pub(crate) use cores::{chain_backward, chain_forward};
pub use report::{
    compression_report, reference_size_table, reference_student_configs, student_shape,
    CompressionReport,
    ReferenceConfig,
};
pub use shape::{factorize_index, EmbeddingMode, FactorizedShape};
pub use stp::{stp, stp_backward, stp_into, stp_matrix};
