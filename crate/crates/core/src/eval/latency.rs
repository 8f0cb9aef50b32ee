use std::time::Instant;

use serde::Serialize;

use super::Scorer;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const SESSIONS_PER_RUN: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    /// Median wall time of one run of 100 sessions, in seconds.
    pub median_seconds: f64,
    pub runs: Vec<f64>,
}

impl std::fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "seconds per {SESSIONS_PER_RUN} sessions: {:.6} (median of {} runs)",
            self.median_seconds,
            self.runs.len()
        )
    }
}

fn top_k(scores: &[f32], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    let k = k.min(ids.len());
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < ids.len() {
        ids.select_nth_unstable_by(k, cmp);
        ids.truncate(k);
    }
    ids.sort_by(cmp);
    ids
}

fn one_run(scorer: &dyn Scorer, sessions: &[Vec<usize>], start: usize) -> Result<f64> {
    let t = Instant::now();
    for j in 0..SESSIONS_PER_RUN {
        let s = &sessions[(start + j) % sessions.len()];
        let scores = scorer.score_batch(&[s.as_slice()])?;
        std::hint::black_box(top_k(scores.data(), 10));
    }
    Ok(t.elapsed().as_secs_f64())
}

/// Times `repetitions` runs of 100 one-at-a-time predictions plus top-10
/// ranking on the calling thread, after one untimed warm-up run. Fewer than
/// 100 sessions are cycled.
pub fn latency_benchmark(
    scorer: &dyn Scorer,
    sessions: &[Vec<usize>],
    repetitions: usize,
) -> Result<LatencyReport> {
    if sessions.is_empty() {
        return Err(Error::InvalidInput("no sessions to time".into()));
    }
    if repetitions == 0 {
        return Err(Error::config("repetitions", "must be positive"));
    }
    par::with_execution(Execution::Sequential, || {
        one_run(scorer, sessions, 0)?;
        let mut runs = Vec::with_capacity(repetitions);
        for r in 0..repetitions {
            runs.push(one_run(scorer, sessions, r * SESSIONS_PER_RUN)?);
        }
        let mut sorted = runs.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        Ok(LatencyReport {
            median_seconds: median,
            runs,
        })
    })
}
