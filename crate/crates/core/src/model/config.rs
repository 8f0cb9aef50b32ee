use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tt::{EmbeddingMode, FactorizedShape};

/// Architecture of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_items: usize,
    pub embed_dim: usize,
    pub max_seq_len: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub embedding: EmbeddingMode,
    /// Required unless `embedding` is dense.
    pub shape: Option<FactorizedShape>,
}

impl ModelConfig {
    pub fn dense(num_items: usize, embed_dim: usize) -> Self {
        ModelConfig {
            num_items,
            embed_dim,
            max_seq_len: 50,
            num_layers: 1,
            num_heads: 1,
            dropout: 0.0,
            embedding: EmbeddingMode::Dense,
            shape: None,
        }
    }

    /// Same architecture with a factorized item table.
    pub fn compressed(&self, mode: EmbeddingMode, shape: FactorizedShape) -> Self {
        ModelConfig {
            embedding: mode,
            shape: Some(shape),
            ..self.clone()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_items == 0 {
            return Err(Error::config("num_items", "must be positive"));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim", "must be positive"));
        }
        if self.max_seq_len == 0 {
            return Err(Error::config("max_seq_len", "must be at least 1"));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::config(
                "num_heads",
                format!(
                    "{} heads do not divide embed_dim {}",
                    self.num_heads, self.embed_dim
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(
                "dropout",
                format!("{} is outside [0, 1)", self.dropout),
            ));
        }
        match (&self.shape, self.embedding) {
            (_, EmbeddingMode::Dense) => Ok(()),
            (None, mode) => Err(Error::config(
                "shape",
                format!("{mode} embedding needs a factorized shape"),
            )),
            (Some(shape), mode) => {
                shape.validate_for(mode)?;
                if shape.embed_dim != self.embed_dim {
                    return Err(Error::config(
                        "dim_factors",
                        format!(
                            "product {} differs from embed_dim {}",
                            shape.embed_dim, self.embed_dim
                        ),
                    ));
                }
                if shape.num_items != self.num_items {
                    return Err(Error::config(
                        "num_items",
                        format!(
                            "shape covers {} items, model has {}",
                            shape.num_items, self.num_items
                        ),
                    ));
                }
                Ok(())
            }
        }
    }
}
