use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::graph::Gradients;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Identifies one parameter of one store inside a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamRef {
    pub store: u64,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    value: Arc<Tensor<T>>,
    grad: Tensor<T>,
    /// First and second Adam moments, allocated on the first optimizer step.
    moments: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Param<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn has_optimizer_state(&self) -> bool {
        self.moments.is_some()
    }
}

/// Adam hyper-parameters. `weight_decay` is an L2 penalty added to the
/// gradient before the moment updates (not the decoupled variant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Named trainable tensors with gradient slots and optimizer state.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    id: u64,
    frozen: bool,
    step: u64,
    params: IndexMap<String, Param<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            frozen: false,
            step: 0,
            params: IndexMap::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Frozen stores hand out constant leaves and refuse optimizer steps.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::config(name, "duplicate parameter name"));
        }
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.insert(
            name,
            Param {
                value: Arc::new(value),
                grad,
                moments: None,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(name, "no such parameter"))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(self.get(name)?.value())
    }

    pub(crate) fn shared_value(&self, name: &str) -> Result<(ParamRef, Arc<Tensor<T>>)> {
        let (index, _, p) = self
            .params
            .get_full(name)
            .ok_or_else(|| Error::config(name, "no such parameter"))?;
        Ok((
            ParamRef {
                store: self.id,
                index,
            },
            Arc::clone(&p.value),
        ))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::config(name, "no such parameter"))?;
        Ok(Arc::make_mut(&mut p.value))
    }

    pub fn total_entries(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds gradients that belong to this store; entries for other stores are ignored.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (r, g) in grads.iter() {
            if r.store != self.id {
                continue;
            }
            let (name, p) = self
                .params
                .get_index_mut(r.index)
                .ok_or_else(|| Error::config("gradient", "parameter index out of range"))?;
            if p.grad.shape() != g.shape() {
                return Err(Error::shape(
                    "accumulate",
                    format!("{name}: {:?} vs {:?}", p.grad.shape(), g.shape()),
                ));
            }
            for (a, &b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    /// One Adam step with bias correction over every parameter.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if self.frozen {
            return Err(Error::config("optimizer", "store is frozen"));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let one = T::one();
        let corr1 = one - T::lit(cfg.beta1.powi(t));
        let corr2 = one - T::lit(cfg.beta2.powi(t));
        let lr = T::lit(cfg.lr);
        let eps = T::lit(cfg.eps);
        let wd = T::lit(cfg.weight_decay);
        for (name, p) in self.params.iter_mut() {
            let (m, v) = p.moments.get_or_insert_with(|| {
                (Tensor::zeros(p.grad.shape()), Tensor::zeros(p.grad.shape()))
            });
            let value = Arc::make_mut(&mut p.value);
            for (((x, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g + wd * *x;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !value.all_finite() {
                return Err(Error::NonFinite(format!("parameter {name} after step {t}")));
            }
        }
        Ok(())
    }

    /// SHA-256 over names, extents and values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            h.update(name.as_bytes());
            for e in p.value.shape() {
                h.update((*e as u64).to_le_bytes());
            }
            for x in p.value.data() {
                h.update(x.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies every parameter into another element type (fresh gradients and no optimizer state).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        out.frozen = self.frozen;
        for (name, p) in &self.params {
            out.insert(name.clone(), p.value.cast())
                .expect("names are unique and values finite");
        }
        out
    }

    /// Keeps only parameters whose name satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> ParamStore<T> {
        let mut out = ParamStore::new();
        out.frozen = self.frozen;
        for (name, p) in &self.params {
            if keep(name) {
                out.insert(name.clone(), (*p.value).clone())
                    .expect("names are unique and values finite");
            }
        }
        out
    }

    /// Overwrites values of same-named parameters from `other`.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, p) in &other.params {
            let dst = self.value_mut(name)?;
            if dst.shape() != p.value.shape() {
                return Err(Error::shape(
                    "assign",
                    format!("{name}: {:?} vs {:?}", dst.shape(), p.value.shape()),
                ));
            }
            dst.data_mut().copy_from_slice(p.value.data());
        }
        Ok(())
    }
}
