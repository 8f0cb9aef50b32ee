//! Ranking metrics, popularity-stratified reporting and a latency harness.

mod latency;
mod long_tail;
mod metrics;

pub use latency::{latency_benchmark, LatencyReport, SESSIONS_PER_RUN};
pub use long_tail::{long_tail_report, BucketStats, LongTailReport, POPULAR_FRACTION};
pub use metrics::{
    evaluate, evaluate_with, hit_contribution, metrics_from_ranks, rank_of, ranks, MetricTable,
};

use crate::error::Result;
use crate::tensor::Tensor;

/// Anything that scores the whole catalog for a batch of sessions.
pub trait Scorer: Sync {
    fn num_items(&self) -> usize;

    /// `B x |V|` scores, higher is better.
    fn score_batch(&self, sessions: &[&[usize]]) -> Result<Tensor<f32>>;
}
