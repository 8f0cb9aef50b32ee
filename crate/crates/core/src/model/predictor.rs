use std::sync::Arc;

use super::network::SeqModel;
use crate::autodiff::{Graph, ParamStore};
use crate::error::Result;
use crate::eval::Scorer;
use crate::tensor::Tensor;

/// Inference wrapper around a trained model.
///
/// The item table is reconstructed once at construction, so scoring a session
/// never touches the cores again.
#[derive(Debug, Clone)]
pub struct Predictor {
    model: SeqModel,
    store: ParamStore<f32>,
    table: Arc<Tensor<f32>>,
}

impl Predictor {
    pub fn new(model: SeqModel, store: &ParamStore<f32>) -> Result<Self> {
        let mut store = store.clone();
        store.freeze();
        let mut g = Graph::eval();
        let b = model.bind(&mut g, &store)?;
        let t = model.item_table(&mut g, &b)?;
        let table = g.shared(t);
        Ok(Predictor { model, store, table })
    }

    pub fn model(&self) -> &SeqModel {
        &self.model
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn table(&self) -> &Tensor<f32> {
        &self.table
    }

    /// `B x N` session vectors.
    pub fn represent(&self, sessions: &[&[usize]]) -> Result<Tensor<f32>> {
        let mut g = Graph::eval();
        let b = self.model.bind(&mut g, &self.store)?;
        let t = g.constant_shared(Arc::clone(&self.table));
        let r = self.model.represent_batch(&mut g, &b, t, sessions)?;
        Ok(g.value(r).clone())
    }

    /// Softmax over the catalog for one session.
    pub fn probabilities(&self, session: &[usize]) -> Result<Vec<f32>> {
        let mut g = Graph::eval();
        let b = self.model.bind(&mut g, &self.store)?;
        let t = g.constant_shared(Arc::clone(&self.table));
        let r = self.model.represent_batch(&mut g, &b, t, &[session])?;
        let logits = self.model.logits(&mut g, r, t)?;
        let p = g.softmax(logits);
        Ok(g.value(p).data().to_vec())
    }
}

impl Scorer for Predictor {
    fn num_items(&self) -> usize {
        self.model.config().num_items
    }

    fn score_batch(&self, sessions: &[&[usize]]) -> Result<Tensor<f32>> {
        let mut g = Graph::eval();
        let b = self.model.bind(&mut g, &self.store)?;
        let t = g.constant_shared(Arc::clone(&self.table));
        let r = self.model.represent_batch(&mut g, &b, t, sessions)?;
        let logits = self.model.logits(&mut g, r, t)?;
        Ok(g.value(logits).clone())
    }
}
