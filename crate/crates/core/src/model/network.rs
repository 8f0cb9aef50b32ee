use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::tt::{CoreSet, EmbeddingMode};

const INIT_RANGE: f64 = 0.1;
const MASKED: f64 = -1e9;

pub const ITEM_TABLE: &str = "item.table";
pub const POSITION_TABLE: &str = "pos.table";

pub fn core_name(k: usize) -> String {
    format!("item.core.{k}")
}

/// Parameter leaves of one model bound into a graph.
#[derive(Debug, Clone)]
pub struct Bound {
    item: ItemVars,
    pos: Var,
    blocks: Vec<BlockVars>,
    readout: [Var; 4],
}

#[derive(Debug, Clone)]
enum ItemVars {
    Table(Var),
    Cores(Vec<Var>),
}

#[derive(Debug, Clone, Copy)]
struct BlockVars {
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    ln1: (Var, Var),
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    ln2: (Var, Var),
}

/// Session encoder: embedding, causal self-attention blocks, soft-attention readout.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    config: ModelConfig,
}

fn block_name(l: usize, part: &str) -> String {
    format!("block.{l}.{part}")
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.gen_range(-INIT_RANGE..=INIT_RANGE)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("extents match")
}

impl SeqModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(SeqModel { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Fresh parameters, uniform in `[-0.1, 0.1]`; layer-norm gains start at 1
    /// and offsets at 0.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        let c = &self.config;
        let n = c.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        match (c.embedding, &c.shape) {
            (EmbeddingMode::Dense, _) => {
                store.insert(ITEM_TABLE, uniform(&mut rng, &[c.num_items, n]))?;
            }
            (mode, Some(shape)) => {
                let cores = CoreSet::<T>::init(shape, mode, rng.gen())?;
                for (k, core) in cores.into_cores().into_iter().enumerate() {
                    store.insert(core_name(k), core)?;
                }
            }
            (mode, None) => {
                return Err(Error::config("shape", format!("{mode} embedding needs a shape")))
            }
        }
        store.insert(POSITION_TABLE, uniform(&mut rng, &[c.max_seq_len, n]))?;
        for l in 0..c.num_layers {
            for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
                store.insert(block_name(l, w), uniform(&mut rng, &[n, n]))?;
            }
            store.insert(block_name(l, "ln1.gain"), Tensor::filled(&[1, n], T::one()))?;
            store.insert(block_name(l, "ln1.bias"), Tensor::zeros(&[1, n]))?;
            store.insert(block_name(l, "ffn.w1"), uniform(&mut rng, &[n, n]))?;
            store.insert(block_name(l, "ffn.b1"), uniform(&mut rng, &[1, n]))?;
            store.insert(block_name(l, "ffn.w2"), uniform(&mut rng, &[n, n]))?;
            store.insert(block_name(l, "ffn.b2"), uniform(&mut rng, &[1, n]))?;
            store.insert(block_name(l, "ln2.gain"), Tensor::filled(&[1, n], T::one()))?;
            store.insert(block_name(l, "ln2.bias"), Tensor::zeros(&[1, n]))?;
        }
        store.insert("readout.w1", uniform(&mut rng, &[n, n]))?;
        store.insert("readout.w2", uniform(&mut rng, &[n, n]))?;
        store.insert("readout.c", uniform(&mut rng, &[1, n]))?;
        store.insert("readout.f", uniform(&mut rng, &[1, n]))?;
        Ok(store)
    }

    /// Adds every parameter of this model to the graph.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>) -> Result<Bound> {
        let c = &self.config;
        let item = match &c.shape {
            Some(shape) if c.embedding != EmbeddingMode::Dense => ItemVars::Cores(
                (0..shape.order())
                    .map(|k| g.param(store, &core_name(k)))
                    .collect::<Result<_>>()?,
            ),
            _ => ItemVars::Table(g.param(store, ITEM_TABLE)?),
        };
        let pos = g.param(store, POSITION_TABLE)?;
        let mut blocks = Vec::with_capacity(c.num_layers);
        for l in 0..c.num_layers {
            let mut p = |part: &str| g.param(store, &block_name(l, part));
            blocks.push(BlockVars {
                wq: p("attn.wq")?,
                wk: p("attn.wk")?,
                wv: p("attn.wv")?,
                wo: p("attn.wo")?,
                ln1: (p("ln1.gain")?, p("ln1.bias")?),
                w1: p("ffn.w1")?,
                b1: p("ffn.b1")?,
                w2: p("ffn.w2")?,
                b2: p("ffn.b2")?,
                ln2: (p("ln2.gain")?, p("ln2.bias")?),
            });
        }
        let readout = [
            g.param(store, "readout.w1")?,
            g.param(store, "readout.w2")?,
            g.param(store, "readout.c")?,
            g.param(store, "readout.f")?,
        ];
        Ok(Bound {
            item,
            pos,
            blocks,
            readout,
        })
    }

    /// The full `|V| x N` item table, reconstructed from cores when compressed.
    pub fn item_table<T: Real>(&self, g: &mut Graph<T>, b: &Bound) -> Result<Var> {
        match &b.item {
            ItemVars::Table(t) => Ok(*t),
            ItemVars::Cores(cores) => {
                let shape = self.config.shape.as_ref().expect("validated");
                let geoms: Vec<_> = (0..shape.order())
                    .map(|k| shape.geom(self.config.embedding, k))
                    .collect();
                g.core_table(cores, &geoms, &shape.item_factors, self.config.num_items)
            }
        }
    }

    /// The most recent `max_seq_len` items.
    pub fn truncate<'a>(&self, items: &'a [usize]) -> &'a [usize] {
        &items[items.len().saturating_sub(self.config.max_seq_len)..]
    }

    fn check_session(&self, items: &[usize]) -> Result<()> {
        if items.is_empty() {
            return Err(Error::InvalidInput("empty session".into()));
        }
        if let Some(&bad) = items.iter().find(|&&i| i >= self.config.num_items) {
            return Err(Error::OutOfRange {
                index: bad,
                limit: self.config.num_items,
            });
        }
        Ok(())
    }

    /// Item plus position embeddings for rows already gathered from the table.
    /// Positions are aligned to the end of the window, so the latest item
    /// always uses the last position row.
    fn add_positions<T: Real>(&self, g: &mut Graph<T>, b: &Bound, rows: Var) -> Result<Var> {
        let l = g.value(rows).dims2().0;
        let pos = g.slice_rows(b.pos, self.config.max_seq_len - l, l)?;
        g.add(rows, pos)
    }

    /// `l x N` input rows of one session.
    pub fn embed_sequence<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        table: Var,
        items: &[usize],
    ) -> Result<Var> {
        self.check_session(items)?;
        let items = self.truncate(items);
        let rows = g.gather_rows(table, items)?;
        self.add_positions(g, b, rows)
    }

    fn layer_norm<T: Real>(&self, g: &mut Graph<T>, x: Var, (gain, bias): (Var, Var)) -> Result<Var> {
        let n = g.layer_norm(x);
        let s = g.mul_row(n, gain)?;
        g.add_row(s, bias)
    }

    fn attention<T: Real>(&self, g: &mut Graph<T>, blk: &BlockVars, x: Var) -> Result<Var> {
        let l = g.value(x).dims2().0;
        let dh = self.config.head_dim();
        let q = g.matmul(x, blk.wq)?;
        let k = g.matmul(x, blk.wk)?;
        let v = g.matmul(x, blk.wv)?;
        let mask: Vec<T> = (0..l * l)
            .map(|e| if e % l > e / l { T::lit(MASKED) } else { T::zero() })
            .collect();
        let mask = g.constant(Tensor::matrix(l, l, mask)?);
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.num_heads);
        for h in 0..self.config.num_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let s = g.matmul_bt(qh, kh)?;
            let s = g.scale(s, scale);
            let s = g.add(s, mask)?;
            let p = g.softmax(s);
            heads.push(g.matmul(p, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        g.matmul(cat, blk.wo)
    }

    /// Attention and feed-forward blocks: `l x N -> l x N`.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let p = self.config.dropout;
        let mut h = g.dropout(x, p)?;
        for blk in &b.blocks {
            let a = self.attention(g, blk, h)?;
            let a = g.dropout(a, p)?;
            let r = g.add(h, a)?;
            let f = self.layer_norm(g, r, blk.ln1)?;
            let z = g.matmul(f, blk.w1)?;
            let z = g.add_row(z, blk.b1)?;
            let z = g.relu(z);
            let z = g.matmul(z, blk.w2)?;
            let z = g.add_row(z, blk.b2)?;
            let z = g.dropout(z, p)?;
            let r = g.add(f, z)?;
            h = self.layer_norm(g, r, blk.ln2)?;
        }
        Ok(h)
    }

    /// Soft-attention pooling. Returns the `1 x N` session vector and the
    /// `l x 1` unnormalized coefficients.
    pub fn readout<T: Real>(&self, g: &mut Graph<T>, b: &Bound, rows: Var) -> Result<(Var, Var)> {
        let [w1, w2, c, f] = b.readout;
        let mean = g.mean_rows(rows);
        let global = g.matmul(mean, w1)?;
        let global = g.add(global, c)?;
        let local = g.matmul(rows, w2)?;
        let gate = g.add_row(local, global)?;
        let gate = g.sigmoid(gate);
        let alpha = g.matmul_bt(gate, f)?;
        let alpha_t = g.transpose(alpha)?;
        let theta = g.matmul(alpha_t, rows)?;
        Ok((theta, alpha))
    }

    /// Session vector of one session.
    pub fn represent<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        table: Var,
        items: &[usize],
    ) -> Result<Var> {
        let x = self.embed_sequence(g, b, table, items)?;
        let h = self.encode(g, b, x)?;
        Ok(self.readout(g, b, h)?.0)
    }

    /// `B x N` session vectors. All item rows are gathered in one operation.
    pub fn represent_batch<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        table: Var,
        sessions: &[&[usize]],
    ) -> Result<Var> {
        if sessions.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut all = Vec::new();
        for s in sessions {
            self.check_session(s)?;
            all.extend_from_slice(self.truncate(s));
        }
        let rows = g.gather_rows(table, &all)?;
        let mut reps = Vec::with_capacity(sessions.len());
        let mut offset = 0;
        for s in sessions {
            let l = self.truncate(s).len();
            let own = g.slice_rows(rows, offset, l)?;
            offset += l;
            let x = self.add_positions(g, b, own)?;
            let h = self.encode(g, b, x)?;
            reps.push(self.readout(g, b, h)?.0);
        }
        if reps.len() == 1 {
            Ok(reps[0])
        } else {
            g.concat_rows(&reps)
        }
    }

    /// `B x |V|` inner products of session vectors with every item.
    pub fn logits<T: Real>(&self, g: &mut Graph<T>, reps: Var, table: Var) -> Result<Var> {
        g.matmul_bt(reps, table)
    }
}
