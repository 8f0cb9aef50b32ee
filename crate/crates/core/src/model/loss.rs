use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
/// In single precision the upper bound is widened to `1 - f32::EPSILON`,
/// since `1 - 1e-8` rounds to one.
pub const PROB_FLOOR: f64 = 1e-8;

fn check_labels(rows: usize, cols: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(
            "rec_loss",
            format!("{} labels for {rows} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= cols) {
        return Err(Error::OutOfRange { index: bad, limit: cols });
    }
    Ok(())
}

/// Binary cross-entropy of a softmax distribution against a one-hot target,
/// summed over every catalog entry and over the batch rows:
/// `-sum_v [y_v log p_v + (1 - y_v) log(1 - p_v)]`.
pub fn rec_loss<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, cols) = g.value(logits).dims2();
    check_labels(rows, cols, labels)?;
    let mut target = vec![T::zero(); rows * cols];
    for (r, &y) in labels.iter().enumerate() {
        target[r * cols + y] = T::one();
    }
    let other: Vec<T> = target.iter().map(|&t| T::one() - t).collect();
    let target = g.constant(Tensor::matrix(rows, cols, target)?);
    let other = g.constant(Tensor::matrix(rows, cols, other)?);

    let p = g.softmax(logits);
    let floor = T::lit(PROB_FLOOR);
    let p = g.clamp(p, floor, T::one() - floor.max(T::epsilon()));
    let log_p = g.log(p);
    let neg = g.scale(p, -T::one());
    let q = g.add_scalar(neg, T::one());
    let log_q = g.log(q);
    let hit = g.mul(log_p, target)?;
    let miss = g.mul(log_q, other)?;
    let both = g.add(hit, miss)?;
    let total = g.sum(both);
    Ok(g.scale(total, -T::one()))
}

/// The same loss evaluated directly on one probability vector.
pub fn rec_loss_value(probs: &[f64], label: usize) -> f64 {
    let clamp = |p: f64| p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    -probs
        .iter()
        .enumerate()
        .map(|(v, &p)| {
            if v == label {
                clamp(p).ln()
            } else {
                (1.0 - clamp(p)).ln()
            }
        })
        .sum::<f64>()
}
