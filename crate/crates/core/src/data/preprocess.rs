use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ingest::RawSession;
use super::{DatasetBundle, Session};
use crate::error::{Error, Result};

/// Sessions after filtering, with items re-indexed densely.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preprocessed {
    pub vocab: Vec<String>,
    pub sessions: Vec<Vec<usize>>,
}

/// Drops items seen fewer than `min_item_count` times, then sessions shorter
/// than `min_session_len`, each filter applied once. Surviving items get dense
/// ids in order of first appearance.
pub fn preprocess(
    raw: &[RawSession],
    min_item_count: usize,
    min_session_len: usize,
) -> Result<Preprocessed> {
    if raw.is_empty() {
        return Err(Error::InvalidInput("no sessions to preprocess".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in raw {
        for it in &s.items {
            *counts.entry(it.as_str()).or_default() += 1;
        }
    }
    let kept: Vec<Vec<&str>> = raw
        .iter()
        .map(|s| {
            s.items
                .iter()
                .map(String::as_str)
                .filter(|it| counts[it] >= min_item_count)
                .collect::<Vec<_>>()
        })
        .filter(|s| s.len() >= min_session_len)
        .collect();
    if kept.is_empty() {
        let frequent = counts.values().filter(|&&c| c >= min_item_count).count();
        return Err(Error::InvalidInput(format!(
            "every session was filtered out: {} sessions, {} distinct items, {frequent} items with at least {min_item_count} occurrences",
            raw.len(),
            counts.len(),
        )));
    }
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut vocab = Vec::new();
    let sessions = kept
        .iter()
        .map(|s| {
            s.iter()
                .map(|&it| {
                    *ids.entry(it).or_insert_with(|| {
                        vocab.push(it.to_owned());
                        vocab.len() - 1
                    })
                })
                .collect()
        })
        .collect();
    Ok(Preprocessed { vocab, sessions })
}

/// `[a, b, c, d]` becomes `([a], b), ([a, b], c), ([a, b, c], d)`.
pub fn augment(prefix: &[usize]) -> Vec<Session> {
    (1..prefix.len())
        .map(|end| Session::new(prefix[..end].to_vec(), prefix[end]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            valid_fraction: 0.1,
            seed: 42,
        }
    }
}

/// Last item of every session is its test label. Training prefixes of length
/// at least 2 are training sessions; a seeded `valid_fraction` of them is held
/// out whole for validation.
pub fn split(pre: Preprocessed, cfg: &SplitConfig) -> Result<DatasetBundle> {
    if !(0.0..1.0).contains(&cfg.valid_fraction) {
        return Err(Error::config(
            "valid_fraction",
            format!("{} is outside [0, 1)", cfg.valid_fraction),
        ));
    }
    let mut popularity = vec![0u64; pre.vocab.len()];
    let mut test = Vec::with_capacity(pre.sessions.len());
    let mut prefixes = Vec::new();
    for s in pre.sessions {
        let (label, prefix) = s.split_last().expect("sessions have length >= 2");
        for &it in prefix {
            popularity[it] += 1;
        }
        test.push(Session::new(prefix.to_vec(), *label));
        if prefix.len() >= 2 {
            prefixes.push(prefix.to_vec());
        }
    }
    let n_valid = (cfg.valid_fraction * prefixes.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut held = vec![false; prefixes.len()];
    for i in rand::seq::index::sample(&mut rng, prefixes.len(), n_valid) {
        held[i] = true;
    }
    let mut train_sessions = Vec::new();
    let mut valid_sessions = Vec::new();
    for (p, h) in prefixes.into_iter().zip(held) {
        if h {
            valid_sessions.push(p);
        } else {
            train_sessions.push(p);
        }
    }
    let train = train_sessions.iter().flat_map(|p| augment(p)).collect();
    let valid = valid_sessions
        .iter()
        .map(|p| {
            let (label, items) = p.split_last().expect("length >= 2");
            Session::new(items.to_vec(), *label)
        })
        .collect();
    Ok(DatasetBundle {
        vocab: pre.vocab,
        train_sessions,
        valid_sessions,
        train,
        valid,
        test,
        popularity,
    })
}
