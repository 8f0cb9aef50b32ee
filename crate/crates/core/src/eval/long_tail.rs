use serde::Serialize;

use super::metrics::ranks;
use super::Scorer;
use crate::data::{top_fraction_mask, Session};
use crate::error::{Error, Result};
use crate::par;

/// Share of the catalog, by training clicks, counted as popular.
pub const POPULAR_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketStats {
    pub instances: usize,
    pub hits: usize,
    /// P@5 within the bucket.
    pub precision: f64,
    /// Bucket hits over all instances; the two buckets sum to overall P@5.
    pub contribution: f64,
    /// Bucket hits over all hits.
    pub hit_share: f64,
}

/// P@5 split by whether the label is a popular item. An empty bucket is `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongTailReport {
    pub popular_items: usize,
    pub tail_items: usize,
    pub overall: f64,
    pub popular: Option<BucketStats>,
    pub tail: Option<BucketStats>,
}

impl std::fmt::Display for LongTailReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "bucket     items  instances      P@5  contrib  hit-share"
        )?;
        for (name, items, b) in [
            ("popular", self.popular_items, &self.popular),
            ("long-tail", self.tail_items, &self.tail),
        ] {
            match b {
                Some(b) => writeln!(
                    f,
                    "{name:<9} {items:>6} {:>10} {:>8.2} {:>8.2} {:>10.2}",
                    b.instances,
                    b.precision,
                    b.contribution,
                    100.0 * b.hit_share
                )?,
                None => writeln!(f, "{name:<9} {items:>6}     absent")?,
            }
        }
        write!(f, "overall P@5 {:.2}", self.overall)
    }
}

pub fn long_tail_report(
    scorer: &dyn Scorer,
    instances: &[Session],
    popularity: &[u64],
) -> Result<LongTailReport> {
    if instances.is_empty() {
        return Err(Error::InvalidInput("no instances to evaluate".into()));
    }
    if popularity.len() != scorer.num_items() {
        return Err(Error::shape(
            "long_tail_report",
            format!(
                "{} popularity counts for {} items",
                popularity.len(),
                scorer.num_items()
            ),
        ));
    }
    let popular = top_fraction_mask(popularity, POPULAR_FRACTION);
    let ranks = ranks(scorer, instances, par::execution())?;
    Ok(bucket_report(&ranks, instances, &popular))
}

pub(crate) fn bucket_report(ranks: &[usize], instances: &[Session], popular: &[bool]) -> LongTailReport {
    let total = instances.len();
    let mut count = [0usize; 2];
    let mut hits = [0usize; 2];
    for (r, s) in ranks.iter().zip(instances) {
        let b = usize::from(!popular[s.label]);
        count[b] += 1;
        hits[b] += usize::from(*r <= 5);
    }
    let all_hits = hits[0] + hits[1];
    let stats = |b: usize| {
        (count[b] > 0).then(|| BucketStats {
            instances: count[b],
            hits: hits[b],
            precision: 100.0 * hits[b] as f64 / count[b] as f64,
            contribution: 100.0 * hits[b] as f64 / total as f64,
            hit_share: if all_hits == 0 {
                0.0
            } else {
                hits[b] as f64 / all_hits as f64
            },
        })
    };
    let n_pop = popular.iter().filter(|p| **p).count();
    LongTailReport {
        popular_items: n_pop,
        tail_items: popular.len() - n_pop,
        overall: 100.0 * all_hits as f64 / total as f64,
        popular: stats(0),
        tail: stats(1),
    }
}
