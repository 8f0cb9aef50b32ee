use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::shape::{factorize_index, EmbeddingMode, FactorizedShape};
use super::stp::{stp_backward, stp_into};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::tensor::{Real, Tensor};

/// Uniform view of core `k` as a `left x mid x right` block.
///
/// The middle extent is ordered `i_k * (J_k / divisor) + g`, so the slice that
/// belongs to one item index is contiguous inside every left-rank row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoreGeom {
    pub left: usize,
    pub mid: usize,
    pub right: usize,
    pub divisor: usize,
    pub item_factor: usize,
    pub dim_factor: usize,
}

impl CoreGeom {
    fn groups(&self) -> usize {
        self.dim_factor / self.divisor
    }

    /// Copies the per-item slice as a `left x (groups * right)` matrix.
    fn slice_into<T: Real>(&self, core: &[T], i_k: usize, out: &mut Vec<T>) {
        let seg = self.groups() * self.right;
        out.clear();
        for p in 0..self.left {
            let start = (p * self.mid + i_k * self.groups()) * self.right;
            out.extend_from_slice(&core[start..start + seg]);
        }
    }

    fn scatter_slice<T: Real>(&self, grad: &mut [T], i_k: usize, d_slice: &[T]) {
        let seg = self.groups() * self.right;
        for p in 0..self.left {
            let start = (p * self.mid + i_k * self.groups()) * self.right;
            for (g, &d) in grad[start..start + seg]
                .iter_mut()
                .zip(&d_slice[p * seg..(p + 1) * seg])
            {
                *g += d;
            }
        }
    }
}

/// Per-item slice chain. Returns the item's `N` embedding entries in `out` and,
/// when `trace` is given, the chain input before each core.
pub(crate) fn chain_forward<T: Real>(
    geoms: &[CoreGeom],
    cores: &[&[T]],
    multi: &[usize],
    out: &mut [T],
    mut trace: Option<&mut Vec<Vec<T>>>,
) {
    let mut acc = vec![T::one()];
    let mut rows = 1;
    let mut slice = Vec::new();
    if let Some(t) = trace.as_deref_mut() {
        t.clear();
    }
    for (k, g) in geoms.iter().enumerate() {
        g.slice_into(cores[k], multi[k], &mut slice);
        let mut next = vec![T::zero(); rows * g.dim_factor * g.right];
        stp_into(&acc, rows, &slice, g.left, g.groups() * g.right, g.divisor, &mut next);
        if let Some(t) = trace.as_deref_mut() {
            t.push(std::mem::replace(&mut acc, next));
        } else {
            acc = next;
        }
        rows *= g.dim_factor;
    }
    out.copy_from_slice(&acc);
}

/// Accumulates the gradient of `<d_out, embedding(item)>` into per-core buffers.
pub(crate) fn chain_backward<T: Real>(
    geoms: &[CoreGeom],
    cores: &[&[T]],
    multi: &[usize],
    d_out: &[T],
    grads: &mut [Vec<T>],
) {
    let mut trace = Vec::with_capacity(geoms.len());
    let mut scratch = vec![T::zero(); d_out.len()];
    chain_forward(geoms, cores, multi, &mut scratch, Some(&mut trace));
    let mut d_acc = d_out.to_vec();
    let mut slice = Vec::new();
    let mut rows: usize = geoms.iter().map(|g| g.dim_factor).product();
    for k in (0..geoms.len()).rev() {
        let g = &geoms[k];
        rows /= g.dim_factor;
        g.slice_into(cores[k], multi[k], &mut slice);
        let q = g.groups() * g.right;
        let mut d_slice = vec![T::zero(); slice.len()];
        let input = &trace[k];
        if k > 0 {
            let mut d_in = vec![T::zero(); input.len()];
            stp_backward(input, rows, &slice, g.left, q, g.divisor, &d_acc,
                         Some(&mut d_in), Some(&mut d_slice));
            d_acc = d_in;
        } else {
            stp_backward(input, rows, &slice, g.left, q, g.divisor, &d_acc,
                         None, Some(&mut d_slice));
        }
        g.scatter_slice(&mut grads[k], multi[k], &d_slice);
    }
}

/// The learnable representation of an item embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreSet<T> {
    mode: EmbeddingMode,
    shape: Option<FactorizedShape>,
    cores: Vec<Tensor<T>>,
}

impl<T: Real> CoreSet<T> {
    pub fn dense(table: Tensor<T>) -> Result<Self> {
        if table.shape().len() != 2 {
            return Err(Error::shape("dense table", format!("{:?}", table.shape())));
        }
        Ok(CoreSet {
            mode: EmbeddingMode::Dense,
            shape: None,
            cores: vec![table],
        })
    }

    /// Wraps existing cores after checking them against the shape.
    pub fn from_cores(
        mode: EmbeddingMode,
        shape: FactorizedShape,
        cores: Vec<Tensor<T>>,
    ) -> Result<Self> {
        if mode == EmbeddingMode::Dense {
            return Err(Error::config("mode", "dense tables have no cores"));
        }
        shape.validate_for(mode)?;
        let want = shape.core_extents(mode);
        if want.len() != cores.len() {
            return Err(Error::shape(
                "core set",
                format!("expected {} cores, got {}", want.len(), cores.len()),
            ));
        }
        for (k, (w, c)) in want.iter().zip(&cores).enumerate() {
            if w.as_slice() != c.shape() {
                return Err(Error::shape(
                    "core set",
                    format!("core {k} has extents {:?}, expected {w:?}", c.shape()),
                ));
            }
        }
        Ok(CoreSet {
            mode,
            shape: Some(shape),
            cores,
        })
    }

    /// Uniform `U(-0.1, 0.1)` initialisation, deterministic in `seed`.
    pub fn init(shape: &FactorizedShape, mode: EmbeddingMode, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |ext: &[usize]| {
            let n: usize = ext.iter().product();
            let data = (0..n).map(|_| T::lit(rng.gen_range(-0.1..=0.1))).collect();
            Tensor::new(ext.to_vec(), data)
        };
        match mode {
            EmbeddingMode::Dense => {
                shape.validate()?;
                CoreSet::dense(fill(&[shape.num_items, shape.embed_dim])?)
            }
            _ => {
                shape.validate_for(mode)?;
                let cores = shape
                    .core_extents(mode)
                    .iter()
                    .map(|e| fill(e))
                    .collect::<Result<Vec<_>>>()?;
                CoreSet::from_cores(mode, shape.clone(), cores)
            }
        }
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub fn shape(&self) -> Option<&FactorizedShape> {
        self.shape.as_ref()
    }

    pub fn cores(&self) -> &[Tensor<T>] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<Tensor<T>> {
        self.cores
    }

    pub fn num_items(&self) -> usize {
        match &self.shape {
            Some(s) => s.num_items,
            None => self.cores[0].shape()[0],
        }
    }

    pub fn embed_dim(&self) -> usize {
        match &self.shape {
            Some(s) => s.embed_dim,
            None => self.cores[0].shape()[1],
        }
    }

    /// Number of stored entries.
    pub fn param_count(&self) -> usize {
        self.cores.iter().map(Tensor::len).sum()
    }

    pub fn geoms(&self) -> Vec<CoreGeom> {
        match &self.shape {
            Some(s) => (0..s.order()).map(|k| s.geom(self.mode, k)).collect(),
            None => Vec::new(),
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        let limit = self.num_items();
        if i >= limit {
            return Err(Error::OutOfRange { index: i, limit });
        }
        Ok(())
    }

    /// Embedding of item `i`, dispatched on the storage mode.
    pub fn lookup(&self, i: usize) -> Result<Vec<T>> {
        match self.mode {
            EmbeddingMode::Dense => {
                self.check_index(i)?;
                Ok(self.cores[0].row_slice(i).to_vec())
            }
            EmbeddingMode::Ttd => self.tt_lookup(i),
            EmbeddingMode::Sttd => self.sttd_lookup(i),
        }
    }

    /// Entry-wise tensor-train evaluation: for every multi-index `(j_1..j_d)` the
    /// entry is the product `G1[(i1,j1),:] G2[:,(i2,j2),:] ... Gd[:,(id,jd)]`.
    /// Output is flattened row-major over `(j_1..j_d)`.
    pub fn tt_lookup(&self, i: usize) -> Result<Vec<T>> {
        if self.mode != EmbeddingMode::Ttd {
            return Err(Error::config("mode", format!("tt_lookup on {} cores", self.mode)));
        }
        self.check_index(i)?;
        let shape = self.shape.as_ref().expect("ttd cores carry a shape");
        let idx = factorize_index(i, &shape.item_factors)?;
        let d = shape.order();
        let mut out = Vec::with_capacity(shape.embed_dim);
        for flat in 0..shape.embed_dim {
            let js = factorize_index(flat, &shape.dim_factors)?;
            let mut v = vec![T::one()];
            for k in 0..d {
                let ext = self.cores[k].shape();
                let (r_in, mid, r_out) = (ext[0], ext[1], ext[2]);
                let m = idx[k] * shape.dim_factors[k] + js[k];
                let core = self.cores[k].data();
                let mut next = vec![T::zero(); r_out];
                for (a, &va) in v.iter().enumerate().take(r_in) {
                    let base = (a * mid + m) * r_out;
                    for (b, nb) in next.iter_mut().enumerate() {
                        *nb += va * core[base + b];
                    }
                }
                v = next;
            }
            out.push(v[0]);
        }
        Ok(out)
    }

    /// Semi-tensor-product chain over the per-item core slices.
    pub fn sttd_lookup(&self, i: usize) -> Result<Vec<T>> {
        let shape = match (&self.shape, self.mode) {
            (Some(s), EmbeddingMode::Sttd | EmbeddingMode::Ttd) => s,
            _ => return Err(Error::config("mode", "sttd_lookup needs factorized cores")),
        };
        self.check_index(i)?;
        let multi = factorize_index(i, &shape.item_factors)?;
        let cores: Vec<&[T]> = self.cores.iter().map(Tensor::data).collect();
        let mut out = vec![T::zero(); shape.embed_dim];
        chain_forward(&self.geoms(), &cores, &multi, &mut out, None);
        Ok(out)
    }

    pub fn materialize_table(&self) -> Tensor<T> {
        self.materialize_table_with(par::execution())
    }

    /// Full `|V| x N` table, evaluated with its own index arithmetic rather than
    /// through the slice/stp path used by lookups, so the two can check each other.
    pub fn materialize_table_with(&self, exec: Execution) -> Tensor<T> {
        if self.mode == EmbeddingMode::Dense {
            return self.cores[0].clone();
        }
        let shape = self.shape.as_ref().expect("factorized cores carry a shape");
        let geoms = self.geoms();
        let n_items = shape.num_items;
        let n_dim = shape.embed_dim;
        let mut table = vec![T::zero(); n_items * n_dim];
        let exec = par::pick(exec, n_items * n_dim * shape.rank);
        par::for_each_row(exec, &mut table, n_dim, |item, row| {
            // mixed radix, most significant first
            let mut idx = vec![0; geoms.len()];
            let mut rest = item;
            for k in (0..geoms.len()).rev() {
                idx[k] = rest % geoms[k].item_factor;
                rest /= geoms[k].item_factor;
            }
            let mut cur = vec![T::one()];
            let (mut rows, mut cols) = (1usize, 1usize);
            for (k, g) in geoms.iter().enumerate() {
                let core = self.cores[k].data();
                let jg = g.dim_factor / g.divisor;
                let width = g.dim_factor * g.right;
                let mut next = vec![T::zero(); rows * width];
                for h in 0..rows {
                    for gg in 0..jg {
                        for r in 0..g.right {
                            for t in 0..g.divisor {
                                let mut s = T::zero();
                                for p in 0..g.left {
                                    let lhs = cur[h * cols + p * g.divisor + t];
                                    let rhs = core[(p * g.mid + idx[k] * jg + gg) * g.right + r];
                                    s += lhs * rhs;
                                }
                                next[h * width + (gg * g.right + r) * g.divisor + t] = s;
                            }
                        }
                    }
                }
                cur = next;
                rows *= g.dim_factor;
                cols = g.right;
            }
            row.copy_from_slice(&cur);
        });
        Tensor::matrix(n_items, n_dim, table).expect("table extents")
    }
}
