//! Mini-batch training loops for the teacher and for distillation.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Graph, ParamStore};
use crate::data::{DatasetBundle, Session};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::kd::{joint_loss, partition_hot_cold, BatchLosses, KdConfig, KdHeads, KdModels};
use crate::model::{rec_loss, Predictor, SeqModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 100,
            l2: 1e-5,
            epochs: 30,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::config("lr", format!("{} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.l2 < 0.0 || !self.l2.is_finite() {
            return Err(Error::config("l2", format!("{} must be non-negative", self.l2)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be positive"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.l2,
            ..AdamConfig::default()
        }
    }
}

/// One line of the training log. Loss components are per-instance means over
/// the epoch; `val_p5` is NaN when there is no validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rec: f64,
    pub cl: f64,
    pub pred: f64,
    pub soft: f64,
    pub total: f64,
    pub val_p5: f64,
    pub wall_s: f64,
}

pub const LOG_HEADER: &str = "epoch\tl_rec\tl_cl\tl_pred\tl_soft\ttotal\tval_p5\twall_s";

impl EpochRecord {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.3}",
            self.epoch, self.rec, self.cl, self.pred, self.soft, self.total, self.val_p5, self.wall_s
        )
    }

    pub fn parse_tsv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split('\t').collect();
        if f.len() != 8 {
            return Err(Error::Format(format!("expected 8 fields, got {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::Format(format!("field {} ({:?}) is not a number", i + 1, f[i])))
        };
        Ok(EpochRecord {
            epoch: f[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad epoch {:?}", f[0])))?,
            rec: num(1)?,
            cl: num(2)?,
            pred: num(3)?,
            soft: num(4)?,
            total: num(5)?,
            val_p5: num(6)?,
            wall_s: num(7)?,
        })
    }
}

/// Parses a log file's content. Header lines (repeated when runs append) are skipped.
pub fn parse_log(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("epoch"))
        .map(EpochRecord::parse_tsv)
        .collect()
}

/// Appends records to a log file, writing the header when the file is new.
pub fn append_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(LOG_HEADER);
        text.push('\n');
    }
    for r in records {
        text.push_str(&r.to_tsv());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation P@5 (the last epoch
    /// without a validation split).
    pub params: ParamStore<f32>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Set when a non-finite loss aborted training; `params` then holds the
    /// last good state.
    pub diverged: Option<String>,
}

/// Validation P@5 of a parameter set, NaN without validation data.
fn validation_p5(model: &SeqModel, params: &ParamStore<f32>, bundle: &DatasetBundle) -> Result<f64> {
    if bundle.valid.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = Predictor::new(model.clone(), params)?;
    Ok(evaluate(&pred, &bundle.valid, &[5])?.precision(5).unwrap_or(0.0))
}

fn run_loop(
    model: &SeqModel,
    mut params: ParamStore<f32>,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    seed: u64,
    step: impl Fn(&mut Graph<f32>, &ParamStore<f32>, &[Session]) -> Result<BatchLosses>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if bundle.train.is_empty() {
        return Err(Error::InvalidInput("no training instances".into()));
    }
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..bundle.train.len()).collect();
    let mut best = params.clone();
    let mut best_p5 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut log = Vec::new();
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Session> = chunk.iter().map(|&i| bundle.train[i].clone()).collect();
            let mut g = Graph::train(rng.gen());
            let losses = step(&mut g, &params, &batch)?;
            let total = g.scalar_value(losses.total) as f64;
            if !total.is_finite() {
                return Ok(TrainOutcome {
                    params: best,
                    log,
                    best_epoch,
                    diverged: Some(format!("non-finite loss in epoch {epoch}")),
                });
            }
            let grads = g.backward(losses.total)?;
            params.zero_grad();
            params.accumulate(&grads)?;
            if let Err(e) = params.adam_step(&adam) {
                if matches!(e, Error::NonFinite(_)) {
                    return Ok(TrainOutcome {
                        params: best,
                        log,
                        best_epoch,
                        diverged: Some(format!("{e} in epoch {epoch}")),
                    });
                }
                return Err(e);
            }
            let w = batch.len() as f64;
            for (s, v) in sums
                .iter_mut()
                .zip([losses.rec, losses.cl, losses.pred, losses.soft, total])
            {
                *s += v * w;
            }
        }
        let n = bundle.train.len() as f64;
        let val_p5 = validation_p5(model, &params, bundle)?;
        let rec = EpochRecord {
            epoch,
            rec: sums[0] / n,
            cl: sums[1] / n,
            pred: sums[2] / n,
            soft: sums[3] / n,
            total: sums[4] / n,
            val_p5,
            wall_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        log.push(rec);
        if val_p5.is_nan() || val_p5 > best_p5 {
            best_p5 = if val_p5.is_nan() { best_p5 } else { val_p5 };
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best,
        log,
        best_epoch,
        diverged: None,
    })
}

/// Trains a model on the mean recommendation loss.
pub fn train_teacher(
    model: &SeqModel,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    check_catalog(model, bundle)?;
    let params = model.init_params(seed)?;
    run_loop(
        model,
        params,
        bundle,
        cfg,
        seed,
        |g, p, batch| {
            let b = model.bind(g, p)?;
            let table = model.item_table(g, &b)?;
            let sessions: Vec<&[usize]> = batch.iter().map(|s| s.items.as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let reps = model.represent_batch(g, &b, table, &sessions)?;
            let logits = model.logits(g, reps, table)?;
            let rec = rec_loss(g, logits, &labels)?;
            let n = batch.len() as f64;
            Ok(BatchLosses {
                total: g.scale(rec, 1.0 / n as f32),
                rec: g.scalar_value(rec) as f64 / n,
                cl: 0.0,
                pred: 0.0,
                soft: 0.0,
            })
        },
        on_epoch,
    )
}

fn check_catalog(model: &SeqModel, bundle: &DatasetBundle) -> Result<()> {
    if model.config().num_items != bundle.num_items() {
        return Err(Error::config(
            "num_items",
            format!(
                "model has {} items, dataset has {}",
                model.config().num_items,
                bundle.num_items()
            ),
        ));
    }
    Ok(())
}

/// Trains a compressed student against a frozen teacher. The returned
/// parameters include the distillation heads (`kd.*`).
#[allow(clippy::too_many_arguments)]
pub fn distill(
    teacher: &SeqModel,
    teacher_params: &ParamStore<f32>,
    student: &SeqModel,
    bundle: &DatasetBundle,
    kd: &KdConfig,
    cfg: &TrainConfig,
    seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    kd.validate()?;
    check_catalog(student, bundle)?;
    check_catalog(teacher, bundle)?;
    if teacher.config().embed_dim != student.config().embed_dim {
        return Err(Error::config(
            "embed_dim",
            format!(
                "teacher has {}, student has {}",
                teacher.config().embed_dim,
                student.config().embed_dim
            ),
        ));
    }
    let mut frozen = teacher_params.clone();
    frozen.freeze();
    let partition = partition_hot_cold(&bundle.popularity, kd.hot_fraction)?;
    let mut params = student.init_params(seed)?;
    KdHeads::init(&mut params, student.config().embed_dim, seed ^ 0x6b64)?;
    run_loop(
        student,
        params,
        bundle,
        cfg,
        seed,
        |g, p, batch| {
            let models = KdModels {
                teacher,
                teacher_params: &frozen,
                student,
                student_params: p,
            };
            joint_loss(g, &models, kd, &partition, batch)
        },
        on_epoch,
    )
}
