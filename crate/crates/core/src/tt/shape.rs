use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the item embedding table is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    #[default]
    Dense,
    Ttd,
    Sttd,
}

impl std::fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingMode::Dense => "dense",
            EmbeddingMode::Ttd => "ttd",
            EmbeddingMode::Sttd => "sttd",
        })
    }
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dense" => Ok(EmbeddingMode::Dense),
            "ttd" => Ok(EmbeddingMode::Ttd),
            "sttd" => Ok(EmbeddingMode::Sttd),
            other => Err(Error::config(
                "mode",
                format!("expected dense, ttd or sttd, got {other:?}"),
            )),
        }
    }
}

/// Compression plan for an embedding table.
///
/// `product(item_factors)` may exceed `num_items`; the extra rows exist in the
/// cores but are never addressed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorizedShape {
    pub item_factors: Vec<usize>,
    pub dim_factors: Vec<usize>,
    pub rank: usize,
    pub stp_divisor: usize,
    pub num_items: usize,
    pub embed_dim: usize,
}

impl FactorizedShape {
    /// Builds and validates a shape. `num_items` defaults to the product of the item factors.
    pub fn new(
        item_factors: Vec<usize>,
        dim_factors: Vec<usize>,
        rank: usize,
        stp_divisor: usize,
        num_items: Option<usize>,
    ) -> Result<Self> {
        let embed_dim = dim_factors.iter().product();
        let num_items = num_items.unwrap_or_else(|| item_factors.iter().product());
        let shape = FactorizedShape {
            item_factors,
            dim_factors,
            rank,
            stp_divisor,
            num_items,
            embed_dim,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn order(&self) -> usize {
        self.item_factors.len()
    }

    pub fn padded_items(&self) -> usize {
        self.item_factors.iter().product()
    }

    /// Checks every invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let d = self.item_factors.len();
        if d < 2 {
            return Err(Error::config(
                "item_factors",
                format!("need at least 2 factors, got {d}"),
            ));
        }
        if self.dim_factors.len() != d {
            return Err(Error::config(
                "dim_factors",
                format!(
                    "length {} differs from item_factors length {d}",
                    self.dim_factors.len()
                ),
            ));
        }
        if let Some(k) = self.item_factors.iter().position(|&x| x == 0) {
            return Err(Error::config(
                "item_factors",
                format!("factor {k} is zero"),
            ));
        }
        if let Some(k) = self.dim_factors.iter().position(|&x| x == 0) {
            return Err(Error::config("dim_factors", format!("factor {k} is zero")));
        }
        if self.rank == 0 {
            return Err(Error::config("rank", "must be positive"));
        }
        if self.stp_divisor == 0 {
            return Err(Error::config("stp_divisor", "must be positive"));
        }
        if self.num_items == 0 {
            return Err(Error::config("num_items", "must be positive"));
        }
        let padded = self.padded_items();
        if padded < self.num_items {
            return Err(Error::config(
                "item_factors",
                format!(
                    "product {padded} is smaller than num_items {}",
                    self.num_items
                ),
            ));
        }
        let dims: usize = self.dim_factors.iter().product();
        if dims != self.embed_dim {
            return Err(Error::config(
                "dim_factors",
                format!("product {dims} differs from embed_dim {}", self.embed_dim),
            ));
        }
        let n = self.stp_divisor;
        if self.rank % n != 0 {
            return Err(Error::config(
                "stp_divisor",
                format!("{n} does not divide rank {}", self.rank),
            ));
        }
        for (k, &j) in self.dim_factors.iter().enumerate().skip(1) {
            if j % n != 0 {
                return Err(Error::config(
                    "stp_divisor",
                    format!("{n} does not divide dim_factors[{k}] = {j}"),
                ));
            }
        }
        Ok(())
    }

    pub fn validate_for(&self, mode: EmbeddingMode) -> Result<()> {
        self.validate()?;
        if mode == EmbeddingMode::Ttd && self.stp_divisor != 1 {
            return Err(Error::config(
                "stp_divisor",
                format!("TTD cores need divisor 1, got {}", self.stp_divisor),
            ));
        }
        Ok(())
    }

    /// Stored extents of every core.
    ///
    /// STTD: `(I1*J1, R)`, `(R/n, Ik*Jk/n, R)` for middle cores, `(R/n, Id*Jd/n)`.
    /// TTD: `(R_{k-1}, Ik*Jk, R_k)` with `R_0 = R_d = 1`.
    pub fn core_extents(&self, mode: EmbeddingMode) -> Vec<Vec<usize>> {
        let d = self.order();
        match mode {
            EmbeddingMode::Dense => vec![vec![self.num_items, self.embed_dim]],
            EmbeddingMode::Ttd | EmbeddingMode::Sttd => (0..d)
                .map(|k| {
                    let g = self.geom(mode, k);
                    match (mode, k) {
                        (EmbeddingMode::Sttd, 0) => vec![g.mid, g.right],
                        (EmbeddingMode::Sttd, k) if k == d - 1 => vec![g.left, g.mid],
                        _ => vec![g.left, g.mid, g.right],
                    }
                })
                .collect(),
        }
    }

    /// Closed-form parameter count.
    pub fn param_count(&self, mode: EmbeddingMode) -> usize {
        let d = self.order();
        let r = self.rank;
        let ij = |k: usize| self.item_factors[k] * self.dim_factors[k];
        match mode {
            EmbeddingMode::Dense => self.num_items * self.embed_dim,
            EmbeddingMode::Ttd => {
                ij(0) * r + (1..d - 1).map(|k| ij(k) * r * r).sum::<usize>() + ij(d - 1) * r
            }
            EmbeddingMode::Sttd => {
                let n2 = self.stp_divisor * self.stp_divisor;
                ij(0) * r
                    + (1..d - 1).map(|k| ij(k) * r * r / n2).sum::<usize>()
                    + ij(d - 1) * r / n2
            }
        }
    }

    pub(crate) fn geom(&self, mode: EmbeddingMode, k: usize) -> super::CoreGeom {
        let d = self.order();
        let r = self.rank;
        let n = match mode {
            EmbeddingMode::Sttd if k > 0 => self.stp_divisor,
            _ => 1,
        };
        let left = if k == 0 { 1 } else { r / n };
        let right = if k == d - 1 { 1 } else { r };
        super::CoreGeom {
            left,
            mid: self.item_factors[k] * self.dim_factors[k] / n,
            right,
            divisor: n,
            item_factor: self.item_factors[k],
            dim_factor: self.dim_factors[k],
        }
    }
}

/// Mixed-radix decomposition of `i`, first factor most significant.
pub fn factorize_index(i: usize, item_factors: &[usize]) -> Result<Vec<usize>> {
    let limit: usize = item_factors.iter().product();
    if i >= limit {
        return Err(Error::OutOfRange { index: i, limit });
    }
    let mut out = vec![0; item_factors.len()];
    let mut rest = i;
    for (slot, &f) in out.iter_mut().zip(item_factors).rev() {
        *slot = rest % f;
        rest /= f;
    }
    Ok(out)
}
