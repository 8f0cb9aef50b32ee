use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ingest::RawSession;
use super::preprocess::{preprocess, split, SplitConfig};
use super::DatasetBundle;
use crate::error::{Error, Result};

/// Parameters of the synthetic session generator.
///
/// Every item has one primary successor (together they form a single cycle
/// through the catalog) and `extra_successors` alternatives drawn by
/// popularity. The primary successor is taken with probability
/// `e^s / (e^s + extra_successors)` for sharpness `s`; infinite sharpness gives
/// a deterministic cycle. Session start items follow a power law with
/// exponent `skew`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_items: usize,
    pub num_sessions: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub sharpness: f64,
    pub skew: f64,
    pub extra_successors: usize,
    pub valid_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_items: 1000,
            num_sessions: 5000,
            min_len: 3,
            max_len: 10,
            sharpness: 1.0,
            skew: 1.2,
            extra_successors: 4,
            valid_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_items < 10 {
            return Err(Error::config("num_items", "need at least 10 items"));
        }
        if self.num_sessions == 0 {
            return Err(Error::config("num_sessions", "must be positive"));
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return Err(Error::config(
                "min_len",
                format!("need 2 <= min_len <= max_len, got {}..{}", self.min_len, self.max_len),
            ));
        }
        if self.sharpness.is_nan() {
            return Err(Error::config("sharpness", "must be a number"));
        }
        if self.skew < 0.0 || !self.skew.is_finite() {
            return Err(Error::config("skew", "must be finite and non-negative"));
        }
        if self.extra_successors == 0 && self.sharpness.is_finite() {
            return Err(Error::config(
                "extra_successors",
                "finite sharpness needs at least one alternative successor",
            ));
        }
        Ok(())
    }

    fn primary_probability(&self) -> f64 {
        if self.sharpness == f64::INFINITY {
            1.0
        } else {
            let e = self.sharpness.exp();
            e / (e + self.extra_successors as f64)
        }
    }
}

/// Raw sessions before preprocessing; item keys are `i<id>`, where smaller ids
/// are more popular as session starts.
pub fn synth_sessions(cfg: &SynthConfig, seed: u64) -> Result<Vec<RawSession>> {
    cfg.validate()?;
    let n = cfg.num_items;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(cfg.skew)).collect();
    let popular = WeightedIndex::new(&weights).expect("positive weights");

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut primary = vec![0; n];
    for k in 0..n {
        primary[order[k]] = order[(k + 1) % n];
    }
    let extras: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..cfg.extra_successors).map(|_| popular.sample(&mut rng)).collect())
        .collect();
    let p_primary = cfg.primary_probability();

    let width = (cfg.num_sessions.max(2) - 1).to_string().len();
    Ok((0..cfg.num_sessions)
        .map(|s| {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let mut cur = popular.sample(&mut rng);
            let mut items = Vec::with_capacity(len);
            items.push(format!("i{cur}"));
            for _ in 1..len {
                cur = if p_primary >= 1.0 || rng.gen::<f64>() < p_primary {
                    primary[cur]
                } else {
                    extras[cur][rng.gen_range(0..extras[cur].len())]
                };
                items.push(format!("i{cur}"));
            }
            RawSession {
                key: format!("s{s:0width$}"),
                items,
            }
        })
        .collect())
}

/// Generates sessions and runs them through the regular preprocessing and
/// splitting pipeline.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<DatasetBundle> {
    let raw = synth_sessions(cfg, seed)?;
    let pre = preprocess(&raw, 5, 2)?;
    split(
        pre,
        &SplitConfig {
            valid_fraction: cfg.valid_fraction,
            seed,
        },
    )
}
