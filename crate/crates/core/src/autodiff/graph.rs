use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::params::{ParamRef, ParamStore};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Real, Tensor};
use crate::tt::{chain_backward, chain_forward, factorize_index, CoreGeom};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, T, T),
    MeanRows(Var),
    SumAll(Var),
    LayerNorm(Var, Vec<T>),
    NormalizeRows(Var, Vec<T>, T),
    Pick(Var, Vec<(usize, usize)>),
    Stp(Var, Var, usize),
    CoreTable(Box<CoreTableOp>),
}

#[derive(Debug, Clone)]
struct CoreTableOp {
    cores: Vec<Var>,
    geoms: Vec<CoreGeom>,
    item_factors: Vec<usize>,
}

#[derive(Debug)]
struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamRef>,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients<T> {
    entries: Vec<(ParamRef, Tensor<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn push(&mut self, r: ParamRef, g: Tensor<T>) {
        self.entries.push((r, g));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamRef, &Tensor<T>)> {
        self.entries.iter().map(|(r, g)| (r, g))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Tape of tensor operations.
///
/// A graph in training mode carries a seeded RNG used for dropout masks; in
/// evaluation mode dropout is the identity.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    rng: Option<ChaCha8Rng>,
    dropout_suspended: bool,
    backward_done: bool,
}

fn mismatch<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error
where
    T: Real,
{
    Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape()))
}

impl<T: Real> Graph<T> {
    pub fn eval() -> Self {
        Graph {
            nodes: Vec::new(),
            rng: None,
            dropout_suspended: false,
            backward_done: false,
        }
    }

    pub fn train(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            dropout_suspended: false,
            backward_done: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Turns dropout into the identity until resumed, e.g. while a frozen
    /// model shares a training graph.
    pub fn suspend_dropout(&mut self, suspended: bool) {
        self.dropout_suspended = suspended;
    }

    pub fn dropout_suspended(&self) -> bool {
        self.dropout_suspended
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shared(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.constant_shared(Arc::new(value))
    }

    pub fn constant_shared(&mut self, value: Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter. Frozen stores yield constants.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let (r, value) = store.shared_value(name)?;
        let trainable = !store.is_frozen();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            param: trainable.then_some(r),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2();
        let (k2, n) = tb.dims2();
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = Tensor::matrix(m, n, kernels::matmul(ta.data(), tb.data(), m, k, n))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2();
        let (n, k2) = tb.dims2();
        if k != k2 {
            return Err(mismatch("matmul_bt", ta, tb));
        }
        let out = Tensor::matrix(m, n, kernels::matmul_bt(ta.data(), tb.data(), m, k, n))?;
        Ok(self.push(out, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        let out = Tensor::matrix(n, m, kernels::transpose(ta.data(), m, n))?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast(&self, x: Var, r: Var, op: &'static str) -> Result<(usize, usize)> {
        let (tx, tr) = (self.value(x), self.value(r));
        let (m, n) = tx.dims2();
        if tr.len() != n {
            return Err(mismatch(op, tx, tr));
        }
        Ok((m, n))
    }

    /// `x (m x n) + r (1 x n)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (_, n) = self.row_broadcast(x, r, "add_row")?;
        let (tx, tr) = (self.value(x), self.value(r));
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tr.data()[i % n])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, r), &[x, r]))
    }

    /// `x (m x n) * r (1 x n)` element-wise, broadcast over rows.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (_, n) = self.row_broadcast(x, r, "mul_row")?;
        let (tx, tr) = (self.value(x), self.value(r));
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * tr.data()[i % n])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulRow(x, r), &[x, r]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v + s);
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let rows = self.value(parts[0]).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if r != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let cols = self.value(parts[0]).dims2().1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims2();
            if c != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            data.extend_from_slice(t.data());
            rows += r;
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        if start + len > n {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {:?}", start + len, t.shape()),
            ));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let out = Tensor::matrix(m, len, data)?;
        Ok(self.push(out, Op::SliceCols(x, start), &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        if start + len > m {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {:?}", start + len, t.shape()),
            ));
        }
        let data = t.data()[start * n..(start + len) * n].to_vec();
        let out = Tensor::matrix(len, n, data)?;
        Ok(self.push(out, Op::SliceRows(x, start), &[x]))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::OutOfRange { index: r, limit: m });
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let out = Tensor::matrix(rows.len(), n, data)?;
        Ok(self.push(out, Op::GatherRows(x, rows.to_vec()), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = (*self.shared(x)).clone().reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    fn rowwise(&self, x: Var, f: impl Fn(&[T], &mut [T])) -> Tensor<T> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            f(t.row_slice(i), &mut out[i * n..(i + 1) * n]);
        }
        Tensor::new(t.shape().to_vec(), out).expect("same extents")
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = self.rowwise(x, |row, o| {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for (y, &v) in o.iter_mut().zip(row) {
                *y = (v - mx).exp();
                s += *y;
            }
            o.iter_mut().for_each(|y| *y /= s);
        });
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = self.rowwise(x, |row, o| {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for (y, &v) in o.iter_mut().zip(row) {
                *y = v - lse;
            }
        });
        self.push(out, Op::LogSoftmax(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::exp);
        self.push(out, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::ln);
        self.push(out, Op::Log(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp(x, lo, hi), &[x])
    }

    /// Column means: `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (m, n) = t.dims2();
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for (o, &v) in out.iter_mut().zip(t.row_slice(i)) {
                *o += v;
            }
        }
        let inv = T::one() / T::lit(m as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(Tensor::row(out), Op::MeanRows(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Row-wise standardisation without affine terms. A zero-variance row maps to zeros.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (m, n) = t.dims2();
        let eps = T::lit(1e-12);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = vec![T::zero(); m * n];
        let nn = T::lit(n as f64);
        for i in 0..m {
            let row = t.row_slice(i);
            let mean = row.iter().copied().sum::<T>() / nn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nn;
            let s = T::one() / (var + eps).sqrt();
            inv_std.push(s);
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out).expect("same extents");
        self.push(out, Op::LayerNorm(x, inv_std), &[x])
    }

    /// Divides each row by `max(norm, eps)`.
    pub fn normalize_rows(&mut self, x: Var, eps: T) -> Var {
        let t = self.value(x);
        let (m, n) = t.dims2();
        let mut norms = Vec::with_capacity(m);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = t.row_slice(i);
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(norm);
            let d = norm.max(eps);
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = v / d;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out).expect("same extents");
        self.push(out, Op::NormalizeRows(x, norms, eps), &[x])
    }

    /// Gathers single entries into a `k x 1` column.
    pub fn pick(&mut self, x: Var, coords: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        let mut data = Vec::with_capacity(coords.len());
        for &(r, c) in coords {
            if r >= m || c >= n {
                return Err(Error::shape(
                    "pick",
                    format!("entry ({r}, {c}) of {:?}", t.shape()),
                ));
            }
            data.push(t.data()[r * n + c]);
        }
        let out = Tensor::matrix(coords.len(), 1, data)?;
        Ok(self.push(out, Op::Pick(x, coords.to_vec()), &[x]))
    }

    /// Inverted dropout; identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if p <= 0.0 || self.dropout_suspended {
            return Ok(x);
        }
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        let shape = self.nodes[x.0].value.shape().to_vec();
        let n: usize = shape.iter().product();
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    /// Left semi-tensor product `a ⋉ b` with block width `n`.
    pub fn stp(&mut self, a: Var, b: Var, n: usize) -> Result<Var> {
        let out = crate::tt::stp_matrix(self.value(a), self.value(b), n)?;
        Ok(self.push(out, Op::Stp(a, b, n), &[a, b]))
    }

    /// Reconstructs the full `num_items x N` embedding table from factorized cores.
    pub fn core_table(
        &mut self,
        cores: &[Var],
        geoms: &[CoreGeom],
        item_factors: &[usize],
        num_items: usize,
    ) -> Result<Var> {
        if cores.len() != geoms.len() || cores.len() != item_factors.len() {
            return Err(Error::shape("core_table", "core/geometry count mismatch"));
        }
        let padded: usize = item_factors.iter().product();
        if num_items > padded {
            return Err(Error::shape(
                "core_table",
                format!("{num_items} items exceed factorized range {padded}"),
            ));
        }
        for (k, (&c, g)) in cores.iter().zip(geoms).enumerate() {
            let want = g.left * g.mid * g.right;
            if self.value(c).len() != want {
                return Err(Error::shape(
                    "core_table",
                    format!("core {k} has {} entries, expected {want}", self.value(c).len()),
                ));
            }
        }
        let n_dim: usize = geoms.iter().map(|g| g.dim_factor).product();
        let refs: Vec<&[T]> = cores.iter().map(|&c| self.value(c).data()).collect();
        let mut table = vec![T::zero(); num_items * n_dim];
        let work = num_items * n_dim * geoms.iter().map(|g| g.left).max().unwrap_or(1);
        let exec = par::pick(par::execution(), work);
        par::for_each_row(exec, &mut table, n_dim, |item, row| {
            let multi = factorize_index(item, item_factors).expect("item within padded range");
            chain_forward(geoms, &refs, &multi, row, None);
        });
        let out = Tensor::matrix(num_items, n_dim, table)?;
        let op = CoreTableOp {
            cores: cores.to_vec(),
            geoms: geoms.to_vec(),
            item_factors: item_factors.to_vec(),
        };
        Ok(self.push(out, Op::CoreTable(Box::new(op)), cores))
    }

    /// Reverse pass from a `1 x 1` loss. May run once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        if !self.value(loss).all_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(
            self.value(loss).shape().to_vec(),
            vec![T::one()],
        )?);
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Some(r) = self.nodes[i].param {
                out.push(r, g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads)?;
        }
        Ok(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        let acc = |grads: &mut [Option<Tensor<T>>], v: Var, d: Tensor<T>| {
            match &mut grads[v.0] {
                Some(existing) => {
                    for (a, &b) in existing.data_mut().iter_mut().zip(d.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(d),
            }
        };
        let like = |v: Var, data: Vec<T>| -> Tensor<T> {
            Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient extents")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.dims2().1;
                if self.needs(*a) {
                    acc(grads, *a, like(*a, kernels::matmul_bt(g.data(), tb.data(), m, n, k)));
                }
                if self.needs(*b) {
                    acc(grads, *b, like(*b, kernels::matmul_at(ta.data(), g.data(), m, k, n)));
                }
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.dims2().0;
                if self.needs(*a) {
                    acc(grads, *a, like(*a, kernels::matmul(g.data(), tb.data(), m, n, k)));
                }
                if self.needs(*b) {
                    acc(grads, *b, like(*b, kernels::matmul_at(g.data(), ta.data(), m, n, k)));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2();
                acc(grads, *a, like(*a, kernels::transpose(g.data(), n, m)));
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
                    acc(grads, *a, like(*a, d));
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                    acc(grads, *b, like(*b, d));
                }
            }
            Op::AddRow(x, r) => {
                if self.needs(*x) {
                    acc(grads, *x, g.clone());
                }
                if self.needs(*r) {
                    let n = self.value(*r).len();
                    let mut d = vec![T::zero(); n];
                    for (j, &v) in g.data().iter().enumerate() {
                        d[j % n] += v;
                    }
                    acc(grads, *r, like(*r, d));
                }
            }
            Op::MulRow(x, r) => {
                let (tx, tr) = (self.value(*x), self.value(*r));
                let n = tr.len();
                if self.needs(*x) {
                    let d = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| v * tr.data()[j % n])
                        .collect();
                    acc(grads, *x, like(*x, d));
                }
                if self.needs(*r) {
                    let mut d = vec![T::zero(); n];
                    for (j, (&v, &xv)) in g.data().iter().zip(tx.data()).enumerate() {
                        d[j % n] += v * xv;
                    }
                    acc(grads, *r, like(*r, d));
                }
            }
            Op::Scale(x, s) => acc(grads, *x, g.map(|v| v * *s)),
            Op::AddScalar(x) => acc(grads, *x, g.clone()),
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).dims2().1;
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        acc(grads, p, like(p, d));
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.needs(p) {
                        acc(grads, p, like(p, g.data()[offset..offset + len].to_vec()));
                    }
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let (m, n) = self.value(*x).dims2();
                let len = g.dims2().1;
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                acc(grads, *x, like(*x, d));
            }
            Op::SliceRows(x, start) => {
                let (m, n) = self.value(*x).dims2();
                let mut d = vec![T::zero(); m * n];
                d[start * n..start * n + g.len()].copy_from_slice(g.data());
                acc(grads, *x, like(*x, d));
            }
            Op::GatherRows(x, rows) => {
                let (m, n) = self.value(*x).dims2();
                let mut d = vec![T::zero(); m * n];
                for (k, &r) in rows.iter().enumerate() {
                    for (a, &b) in d[r * n..(r + 1) * n].iter_mut().zip(&g.data()[k * n..(k + 1) * n]) {
                        *a += b;
                    }
                }
                acc(grads, *x, like(*x, d));
            }
            Op::Reshape(x) => acc(grads, *x, like(*x, g.data().to_vec())),
            Op::Softmax(x) => {
                let (m, n) = y.dims2();
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    let yr = y.row_slice(r);
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &gv) in d[r * n..(r + 1) * n].iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(grads, *x, like(*x, d));
            }
            Op::LogSoftmax(x) => {
                let (m, n) = y.dims2();
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    let yr = y.row_slice(r);
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let s: T = gr.iter().copied().sum();
                    for ((o, &yv), &gv) in d[r * n..(r + 1) * n].iter_mut().zip(yr).zip(gr) {
                        *o = gv - yv.exp() * s;
                    }
                }
                acc(grads, *x, like(*x, d));
            }
            Op::Sigmoid(x) => {
                let d = g.data().iter().zip(y.data()).map(|(&gv, &s)| gv * s * (T::one() - s)).collect();
                acc(grads, *x, like(*x, d));
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                acc(grads, *x, like(*x, d));
            }
            Op::Exp(x) => {
                let d = g.data().iter().zip(y.data()).map(|(&gv, &e)| gv * e).collect();
                acc(grads, *x, like(*x, d));
            }
            Op::Log(x) => {
                let tx = self.value(*x);
                let d = g.data().iter().zip(tx.data()).map(|(&gv, &v)| gv / v).collect();
                acc(grads, *x, like(*x, d));
            }
            Op::Clamp(x, lo, hi) => {
                let tx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(&gv, &v)| if v >= *lo && v <= *hi { gv } else { T::zero() })
                    .collect();
                acc(grads, *x, like(*x, d));
            }
            Op::MeanRows(x) => {
                let (m, n) = self.value(*x).dims2();
                let inv = T::one() / T::lit(m as f64);
                let d = (0..m * n).map(|j| g.data()[j % n] * inv).collect();
                acc(grads, *x, like(*x, d));
            }
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                acc(grads, *x, like(*x, vec![g.item(); n]));
            }
            Op::LayerNorm(x, inv_std) => {
                let (m, n) = y.dims2();
                let nn = T::lit(n as f64);
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    let yr = y.row_slice(r);
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let mean_g = gr.iter().copied().sum::<T>() / nn;
                    let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / nn;
                    for ((o, &yv), &gv) in d[r * n..(r + 1) * n].iter_mut().zip(yr).zip(gr) {
                        *o = inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
                acc(grads, *x, like(*x, d));
            }
            Op::NormalizeRows(x, norms, eps) => {
                let (m, n) = y.dims2();
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    let yr = y.row_slice(r);
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let out = &mut d[r * n..(r + 1) * n];
                    if norms[r] > *eps {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                            *o = (gv - yv * dot) / norms[r];
                        }
                    } else {
                        for (o, &gv) in out.iter_mut().zip(gr) {
                            *o = gv / *eps;
                        }
                    }
                }
                acc(grads, *x, like(*x, d));
            }
            Op::Pick(x, coords) => {
                let (m, n) = self.value(*x).dims2();
                let mut d = vec![T::zero(); m * n];
                for (k, &(r, c)) in coords.iter().enumerate() {
                    d[r * n + c] += g.data()[k];
                }
                acc(grads, *x, like(*x, d));
            }
            Op::Stp(a, b, n) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let h = ta.dims2().0;
                let (p, q) = tb.dims2();
                let mut da = self.needs(*a).then(|| vec![T::zero(); ta.len()]);
                let mut db = self.needs(*b).then(|| vec![T::zero(); tb.len()]);
                crate::tt::stp_backward(
                    ta.data(), h, tb.data(), p, q, *n, g.data(),
                    da.as_deref_mut(), db.as_deref_mut(),
                );
                if let Some(da) = da {
                    acc(grads, *a, like(*a, da));
                }
                if let Some(db) = db {
                    acc(grads, *b, like(*b, db));
                }
            }
            Op::CoreTable(op) => {
                let refs: Vec<&[T]> = op.cores.iter().map(|&c| self.value(c).data()).collect();
                let (num_items, n_dim) = g.dims2();
                let chunks = par::fixed_chunks(num_items, 32);
                let work = num_items * n_dim * op.geoms.iter().map(|gm| gm.left).max().unwrap_or(1);
                let exec = par::pick(par::execution(), work);
                let partial: Vec<Vec<Vec<T>>> = par::map_indexed(exec, chunks.len(), |c| {
                    let mut local: Vec<Vec<T>> =
                        refs.iter().map(|r| vec![T::zero(); r.len()]).collect();
                    for item in chunks[c].clone() {
                        let d_row = &g.data()[item * n_dim..(item + 1) * n_dim];
                        if d_row.iter().all(|v| *v == T::zero()) {
                            continue;
                        }
                        let multi =
                            factorize_index(item, &op.item_factors).expect("item within padded range");
                        chain_backward(&op.geoms, &refs, &multi, d_row, &mut local);
                    }
                    local
                });
                for (k, &core) in op.cores.iter().enumerate() {
                    if !self.needs(core) {
                        continue;
                    }
                    let mut total = vec![T::zero(); refs[k].len()];
                    for part in &partial {
                        for (a, &b) in total.iter_mut().zip(&part[k]) {
                            *a += b;
                        }
                    }
                    acc(grads, core, like(core, total));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (n, t) in entries {
            s.insert(*n, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f64>::eval();
        let x = g.constant(Tensor::row(vec![0.0; 3]));
        let y = g.softmax(x);
        for v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut g = Graph::<f32>::eval();
        let x = g.constant(Tensor::row(vec![2.5; 8]));
        let y = g.layer_norm(x);
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cosine_of_self_is_one() {
        let mut g = Graph::<f64>::eval();
        let x = g.constant(Tensor::row(vec![0.3, -1.2, 4.0]));
        let n = g.normalize_rows(x, 1e-8);
        let c = g.matmul_bt(n, n).unwrap();
        assert!((g.scalar_value(c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let s = store(&[("w", Tensor::matrix(2, 3, vec![1.0; 6]).unwrap())]);
        let mut g = Graph::eval();
        let w = g.param(&s, "w").unwrap();
        let l = g.sum(w);
        let grads = g.backward(l).unwrap();
        let (_, gw) = grads.iter().next().unwrap();
        assert_eq!(gw.data(), &[1.0; 6]);
    }

    #[test]
    fn dot_gradients_swap() {
        let a = Tensor::row(vec![1.0, 2.0, 3.0]);
        let b = Tensor::row(vec![-4.0, 5.0, 0.5]);
        let mut s = store(&[("a", a.clone()), ("b", b.clone())]);
        let mut g = Graph::eval();
        let va = g.param(&s, "a").unwrap();
        let vb = g.param(&s, "b").unwrap();
        let l = g.matmul_bt(va, vb).unwrap();
        let grads = g.backward(l).unwrap();
        s.accumulate(&grads).unwrap();
        assert_eq!(s.get("a").unwrap().grad().data(), b.data());
        assert_eq!(s.get("b").unwrap().grad().data(), a.data());
    }

    #[test]
    fn second_backward_is_rejected() {
        let s = store(&[("w", Tensor::scalar(1.0))]);
        let mut g = Graph::eval();
        let w = g.param(&s, "w").unwrap();
        let l = g.sum(w);
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::BackwardTwice)));
    }

    #[test]
    fn shape_errors_name_extents() {
        let mut g = Graph::<f64>::eval();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut s = store(&[("w", Tensor::scalar(3.0))]);
        let mut g = Graph::eval();
        let w = g.param(&s, "w").unwrap();
        let w2 = g.param(&s, "w").unwrap();
        let y = g.mul(w, w2).unwrap();
        let grads = g.backward(y).unwrap();
        s.accumulate(&grads).unwrap();
        assert_eq!(s.get("w").unwrap().grad().item(), 6.0);
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut s = store(&[("w", Tensor::scalar(3.0))]);
        s.freeze();
        let mut g = Graph::eval();
        let w = g.param(&s, "w").unwrap();
        let y = g.mul(w, w).unwrap();
        assert!(g.backward(y).unwrap().is_empty());
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut g = Graph::<f64>::eval();
        let x = g.constant(Tensor::row(vec![1.0; 10]));
        assert_eq!(g.dropout(x, 0.5).unwrap(), x);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let n = 20_000;
        let p = 0.3;
        let mut g = Graph::<f64>::train(42);
        let x = g.constant(Tensor::row(vec![1.0; n]));
        let y = g.dropout(x, p).unwrap();
        let mean = g.value(y).data().iter().sum::<f64>() / n as f64;
        // each entry is Bernoulli(1-p)/(1-p): variance p/(1-p)
        let sigma = (p / (1.0 - p) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}, sigma {sigma}");
    }
}
