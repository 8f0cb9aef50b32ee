use serde::Serialize;

use super::Scorer;
use crate::data::Session;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Instances scored per call to the scorer.
const EVAL_CHUNK: usize = 100;

/// Position of `label` when items are sorted by descending score with ties
/// broken by ascending id. Ranks start at 1.
pub fn rank_of(scores: &[f32], label: usize) -> usize {
    let s = scores[label];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(v, &x)| x > s || (x == s && v < label))
        .count()
}

/// `(hit, reciprocal rank)` contribution of one rank at cutoff `k`.
pub fn hit_contribution(rank: usize, k: usize) -> (f64, f64) {
    if rank <= k {
        (1.0, 1.0 / rank as f64)
    } else {
        (0.0, 0.0)
    }
}

/// P@K and MRR@K, as percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTable {
    /// `(k, precision, mrr)` per cutoff.
    pub rows: Vec<(usize, f64, f64)>,
    pub instances: usize,
}

impl MetricTable {
    pub fn precision(&self, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == k).map(|r| r.1)
    }

    pub fn mrr(&self, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == k).map(|r| r.2)
    }

    /// Tab-separated `metric value` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        for &(k, p, m) in &self.rows {
            out.push_str(&format!("P@{k}\t{p:.4}\nMRR@{k}\t{m:.4}\n"));
        }
        out.push_str(&format!("instances\t{}\n", self.instances));
        out
    }
}

impl std::fmt::Display for MetricTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &(k, p, m) in &self.rows {
            writeln!(f, "P@{k:<3} {p:>8.2}    MRR@{k:<3} {m:>8.2}")?;
        }
        write!(f, "instances {}", self.instances)
    }
}

pub fn metrics_from_ranks(ranks: &[usize], ks: &[usize]) -> MetricTable {
    let n = ranks.len().max(1) as f64;
    let rows = ks
        .iter()
        .map(|&k| {
            let (mut hits, mut rr) = (0.0, 0.0);
            for &r in ranks {
                let (h, m) = hit_contribution(r, k);
                hits += h;
                rr += m;
            }
            (k, 100.0 * hits / n, 100.0 * rr / n)
        })
        .collect();
    MetricTable {
        rows,
        instances: ranks.len(),
    }
}

/// Label rank of every instance, computed in fixed-size chunks.
pub fn ranks(scorer: &dyn Scorer, instances: &[Session], exec: Execution) -> Result<Vec<usize>> {
    let n_items = scorer.num_items();
    if let Some(bad) = instances.iter().find(|s| s.label >= n_items) {
        return Err(Error::OutOfRange {
            index: bad.label,
            limit: n_items,
        });
    }
    let chunks: Vec<_> = instances.chunks(EVAL_CHUNK).collect();
    let parts = par::map_indexed(exec, chunks.len(), |c| -> Result<Vec<usize>> {
        let chunk = chunks[c];
        let sessions: Vec<&[usize]> = chunk.iter().map(|s| s.items.as_slice()).collect();
        let scores = scorer.score_batch(&sessions)?;
        Ok(chunk
            .iter()
            .enumerate()
            .map(|(r, s)| rank_of(scores.row_slice(r), s.label))
            .collect())
    });
    let mut out = Vec::with_capacity(instances.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate_with(
    scorer: &dyn Scorer,
    instances: &[Session],
    ks: &[usize],
    exec: Execution,
) -> Result<MetricTable> {
    if instances.is_empty() {
        return Err(Error::InvalidInput("no instances to evaluate".into()));
    }
    Ok(metrics_from_ranks(&ranks(scorer, instances, exec)?, ks))
}

pub fn evaluate(scorer: &dyn Scorer, instances: &[Session], ks: &[usize]) -> Result<MetricTable> {
    evaluate_with(scorer, instances, ks, par::execution())
}
