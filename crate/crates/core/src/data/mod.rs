//! Session logs: ingestion, filtering, splitting, augmentation, storage, and a
//! synthetic generator for desk-scale runs.

mod bundle;
mod ingest;
mod preprocess;
mod synth;

use serde::{Deserialize, Serialize};

pub use bundle::{
    bundle_digest, decode_bundle, encode_bundle, read_bundle, write_bundle, BUNDLE_VERSION,
};
pub use ingest::{ingest, ingest_reader, CsvFormat, RawSession};
pub use preprocess::{augment, preprocess, split, Preprocessed, SplitConfig};
pub use synth::{synth_generate, SynthConfig};

/// A labeled session prefix: predict `label` after `items`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub items: Vec<usize>,
    pub label: usize,
}

impl Session {
    pub fn new(items: Vec<usize>, label: usize) -> Self {
        Session { items, label }
    }
}

/// Preprocessed, split and augmented dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetBundle {
    /// Original item key of every dense id.
    pub vocab: Vec<String>,
    /// Training prefixes of the sessions kept for training.
    pub train_sessions: Vec<Vec<usize>>,
    /// Training prefixes of the sessions held out for validation.
    pub valid_sessions: Vec<Vec<usize>>,
    /// Augmented instances of `train_sessions`.
    pub train: Vec<Session>,
    /// Last-item instance of every validation prefix.
    pub valid: Vec<Session>,
    /// Last-item instance of every session.
    pub test: Vec<Session>,
    /// Interaction count of every item over all training prefixes.
    pub popularity: Vec<u64>,
}

/// Summary counts in the layout of a dataset statistics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub num_items: usize,
    pub train_sessions: usize,
    pub train_instances: usize,
    pub valid_sessions: usize,
    pub test_sessions: usize,
    /// Mean length of the full sessions (test prefix plus label).
    pub avg_length: f64,
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "items              {}", self.num_items)?;
        writeln!(f, "train sessions     {}", self.train_sessions)?;
        writeln!(f, "train instances    {}", self.train_instances)?;
        writeln!(f, "valid sessions     {}", self.valid_sessions)?;
        writeln!(f, "test sessions      {}", self.test_sessions)?;
        write!(f, "average length     {:.2}", self.avg_length)
    }
}

impl DatasetBundle {
    pub fn num_items(&self) -> usize {
        self.vocab.len()
    }

    /// Recomputed from the splits on every call.
    pub fn stats(&self) -> DatasetStats {
        let total: usize = self.test.iter().map(|s| s.items.len() + 1).sum();
        DatasetStats {
            num_items: self.num_items(),
            train_sessions: self.train_sessions.len(),
            train_instances: self.train.len(),
            valid_sessions: self.valid_sessions.len(),
            test_sessions: self.test.len(),
            avg_length: if self.test.is_empty() {
                0.0
            } else {
                total as f64 / self.test.len() as f64
            },
        }
    }
}

/// Item ids sorted by descending count, ties by ascending id.
pub fn popularity_order(popularity: &[u64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..popularity.len()).collect();
    ids.sort_by(|&a, &b| popularity[b].cmp(&popularity[a]).then(a.cmp(&b)));
    ids
}

/// Membership mask of the `round(fraction * |V|)` most popular items.
pub fn top_fraction_mask(popularity: &[u64], fraction: f64) -> Vec<bool> {
    let count = (fraction * popularity.len() as f64).round() as usize;
    let mut mask = vec![false; popularity.len()];
    for &i in popularity_order(popularity).iter().take(count) {
        mask[i] = true;
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_prefer_lower_ids() {
        assert_eq!(popularity_order(&[3, 5, 3, 5]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn mask_size_rounds() {
        let pop: Vec<u64> = (0..10).rev().collect();
        let m = top_fraction_mask(&pop, 0.2);
        assert_eq!(m.iter().filter(|x| **x).count(), 2);
        assert!(m[0] && m[1]);
        let m = top_fraction_mask(&[1; 10], 0.2);
        assert!(m[0] && m[1] && !m[2]);
    }
}
