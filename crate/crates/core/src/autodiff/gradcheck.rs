use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

const STEP: f64 = 1e-4;

/// Denominator floor for the relative error. Coordinates whose analytic and
/// numeric derivatives are both below this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

fn eval_loss(
    store: &ParamStore<f64>,
    build: &impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::eval();
    let l = build(&mut g, store)?;
    let v = g.scalar_value(l);
    if !v.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(v)
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` constructs a scalar loss from the store on a fresh evaluation-mode
/// graph. Up to `samples_per_param` coordinates of every parameter are chosen
/// with a seeded RNG (all of them when the parameter is smaller).
pub fn fd_check(
    store: &ParamStore<f64>,
    build: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut analytic = store.clone();
    analytic.zero_grad();
    {
        let mut g = Graph::eval();
        let l = build(&mut g, &analytic)?;
        let grads = g.backward(l)?;
        analytic.accumulate(&grads)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        let len = store.value(&name)?.len();
        let coords: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            (0..samples_per_param).map(|_| rng.gen_range(0..len)).collect()
        };
        for c in coords {
            let base = store.value(&name)?.data()[c];
            probe.value_mut(&name)?.data_mut()[c] = base + STEP;
            let up = eval_loss(&probe, &build)?;
            probe.value_mut(&name)?.data_mut()[c] = base - STEP;
            let down = eval_loss(&probe, &build)?;
            probe.value_mut(&name)?.data_mut()[c] = base;
            let numeric = (up - down) / (2.0 * STEP);
            let exact = analytic.get(&name)?.grad().data()[c];
            if !numeric.is_finite() || !exact.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}[{c}]")));
            }
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(REL_FLOOR);
            out.checked += 1;
            if rel > out.max_rel_error || out.worst.is_none() {
                out.max_rel_error = out.max_rel_error.max(rel);
                out.worst = Some((name.clone(), c));
            }
        }
    }
    Ok(out)
}
