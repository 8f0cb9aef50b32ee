//! Run configuration: TOML files, named presets and environment overrides.
//!
//! Sections mirror the library modules. Any key can be overridden from the
//! environment with `STTDREC_<SECTION>__<KEY>` (or `STTDREC_<KEY>` for
//! top-level keys); values are parsed as TOML literals and fall back to
//! plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CsvFormat, SplitConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::kd::KdConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::tt::{student_shape, EmbeddingMode, FactorizedShape};

pub const ENV_PREFIX: &str = "STTDREC_";

pub const PRESETS: [&str; 3] = ["tmall", "retailrocket", "synthetic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Raw click log for `preprocess`.
    pub input: Option<PathBuf>,
    pub format: CsvFormat,
    pub min_item_count: usize,
    pub min_session_len: usize,
    pub valid_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            input: None,
            format: CsvFormat::default(),
            min_item_count: 5,
            min_session_len: 2,
            valid_fraction: 0.1,
        }
    }
}

/// Architecture shared by teacher and student. The catalogue size comes from
/// the dataset at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub max_seq_len: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed_dim: 128,
            max_seq_len: 50,
            num_layers: 1,
            num_heads: 1,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentSection {
    pub mode: EmbeddingMode,
    pub item_factors: Vec<usize>,
    pub dim_factors: Vec<usize>,
    pub rank: usize,
    pub stp_divisor: usize,
}

impl Default for StudentSection {
    fn default() -> Self {
        let s = student_shape("tmall", 1, 60, 2).expect("valid built-in shape");
        StudentSection::from_shape(EmbeddingMode::Sttd, &s)
    }
}

impl StudentSection {
    fn from_shape(mode: EmbeddingMode, s: &FactorizedShape) -> Self {
        StudentSection {
            mode,
            item_factors: s.item_factors.clone(),
            dim_factors: s.dim_factors.clone(),
            rank: s.rank,
            stp_divisor: s.stp_divisor,
        }
    }

    pub fn shape(&self, num_items: usize) -> Result<FactorizedShape> {
        let divisor = match self.mode {
            EmbeddingMode::Ttd => 1,
            _ => self.stp_divisor,
        };
        let shape = FactorizedShape {
            item_factors: self.item_factors.clone(),
            dim_factors: self.dim_factors.clone(),
            rank: self.rank,
            stp_divisor: divisor,
            num_items,
            embed_dim: self.dim_factors.iter().product(),
        };
        shape.validate_for(self.mode)?;
        Ok(shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub cutoffs: Vec<usize>,
    pub latency_repetitions: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cutoffs: vec![5, 10, 20],
            latency_repetitions: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; the CLI's `--out` takes precedence.
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub model: ModelSection,
    pub student: StudentSection,
    pub kd: KdConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::tmall()
    }
}

impl RunConfig {
    pub fn tmall() -> Self {
        RunConfig {
            seed: 42,
            out: None,
            data: DataSection::default(),
            model: ModelSection::default(),
            student: StudentSection::default(),
            kd: KdConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            synth: SynthConfig::default(),
        }
    }

    pub fn retailrocket() -> Self {
        let s = student_shape("retailrocket", 1, 100, 2).expect("valid built-in shape");
        RunConfig {
            model: ModelSection {
                embed_dim: 256,
                num_heads: 2,
                dropout: 0.2,
                ..ModelSection::default()
            },
            student: StudentSection::from_shape(EmbeddingMode::Sttd, &s),
            kd: KdConfig::retailrocket(),
            ..RunConfig::tmall()
        }
    }

    /// Desk-scale run on a generated catalogue of 200 items with
    /// deterministic transitions.
    pub fn synthetic() -> Self {
        RunConfig {
            model: ModelSection {
                embed_dim: 32,
                max_seq_len: 10,
                num_layers: 1,
                num_heads: 1,
                dropout: 0.1,
            },
            student: StudentSection {
                mode: EmbeddingMode::Sttd,
                item_factors: vec![10, 20],
                dim_factors: vec![8, 4],
                rank: 6,
                stp_divisor: 2,
            },
            synth: SynthConfig {
                num_items: 200,
                num_sessions: 2000,
                sharpness: f64::INFINITY,
                ..SynthConfig::default()
            },
            ..RunConfig::tmall()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tmall" => Ok(RunConfig::tmall()),
            "retailrocket" => Ok(RunConfig::retailrocket()),
            "synthetic" => Ok(RunConfig::synthetic()),
            other => Err(Error::config(
                "preset",
                format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", ")),
            )),
        }
    }

    /// Parses TOML text. Keys absent from the text keep the values of `base`.
    pub fn from_toml_over(base: &RunConfig, text: &str) -> Result<Self> {
        let overlay: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        let mut merged = to_table(base)?;
        merge(&mut merged, overlay);
        from_table(merged)
    }

    pub fn load(path: &Path, base: &RunConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_over(base, &text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Applies `STTDREC_*` overrides from `vars`.
    pub fn with_overrides<I, K, V>(&self, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table = to_table(self)?;
        let mut touched = false;
        for (key, value) in vars {
            let Some(rest) = key.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path: Vec<String> = rest.split("__").map(|p| p.to_ascii_lowercase()).collect();
            let field = path.join(".");
            if path.iter().any(|p| p.is_empty()) {
                return Err(Error::config(field, "malformed override key"));
            }
            let mut node = &mut table;
            for section in &path[..path.len() - 1] {
                node = match node.get_mut(section) {
                    Some(toml::Value::Table(t)) => t,
                    _ => return Err(Error::config(field, "unknown config section")),
                };
            }
            let leaf = path.last().expect("non-empty path").clone();
            if !node.contains_key(&leaf) && !is_optional_key(&field) {
                return Err(Error::config(field, "unknown config key"));
            }
            node.insert(leaf, parse_literal(value.as_ref()));
            touched = true;
        }
        if !touched {
            return Ok(self.clone());
        }
        from_table(table)
    }

    pub fn with_env(&self) -> Result<Self> {
        self.with_overrides(std::env::vars())
    }

    /// Cross-field checks; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.min_item_count == 0 {
            return Err(Error::config("data.min_item_count", "must be positive"));
        }
        if d.min_session_len < 2 {
            return Err(Error::config(
                "data.min_session_len",
                "sessions need at least 2 items to yield a label",
            ));
        }
        if !(0.0..1.0).contains(&d.valid_fraction) {
            return Err(Error::config(
                "data.valid_fraction",
                format!("{} is outside [0, 1)", d.valid_fraction),
            ));
        }
        self.teacher_config(1).validate().map_err(|e| prefix(e, "model"))?;
        if self.student.mode == EmbeddingMode::Dense {
            return Err(Error::config("student.mode", "the student must be ttd or sttd"));
        }
        let shape = self
            .student
            .shape(self.student.item_factors.iter().product::<usize>().max(1))
            .map_err(|e| prefix(e, "student"))?;
        if shape.embed_dim != self.model.embed_dim {
            return Err(Error::config(
                "student.dim_factors",
                format!(
                    "product {} differs from model.embed_dim {}",
                    shape.embed_dim, self.model.embed_dim
                ),
            ));
        }
        self.kd.validate().map_err(|e| prefix(e, "kd"))?;
        self.train.validate().map_err(|e| prefix(e, "train"))?;
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            return Err(Error::config("eval.cutoffs", "need at least one positive cutoff"));
        }
        if self.eval.latency_repetitions == 0 {
            return Err(Error::config("eval.latency_repetitions", "must be positive"));
        }
        self.synth.validate().map_err(|e| prefix(e, "synth"))?;
        Ok(())
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            valid_fraction: self.data.valid_fraction,
            seed: self.seed,
        }
    }

    pub fn teacher_config(&self, num_items: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            max_seq_len: m.max_seq_len,
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            dropout: m.dropout,
            ..ModelConfig::dense(num_items, m.embed_dim)
        }
    }

    pub fn student_config(&self, num_items: usize) -> Result<ModelConfig> {
        let shape = self
            .student
            .shape(num_items)
            .map_err(|e| prefix(e, "student"))?;
        let cfg = self
            .teacher_config(num_items)
            .compressed(self.student.mode, shape);
        cfg.validate().map_err(|e| prefix(e, "student"))?;
        Ok(cfg)
    }
}

fn is_optional_key(field: &str) -> bool {
    matches!(field, "out" | "data.input")
}

fn prefix(e: Error, section: &str) -> Error {
    match e {
        Error::Config { field, message } if !field.starts_with(section) => Error::Config {
            field: format!("{section}.{field}"),
            message,
        },
        other => other,
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn to_table(cfg: &RunConfig) -> Result<toml::Table> {
    toml::Table::try_from(cfg).map_err(|e| Error::config("config", e.to_string()))
}

fn from_table(table: toml::Table) -> Result<RunConfig> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
