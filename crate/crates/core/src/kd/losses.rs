use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::partition::{recombine, split_session, HotColdPartition};
use super::KdConfig;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::data::Session;
use crate::error::{Error, Result};
use crate::model::{rec_loss, SeqModel};
use crate::tensor::{Real, Tensor};

/// Guard on vector norms inside cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// Projection heads of the distillation tasks, stored with the student.
#[derive(Debug, Clone, Copy)]
pub struct KdHeads {
    pub proj_teacher: Var,
    pub proj_student: Var,
    pub pred_teacher: Var,
    pub pred_student: Var,
}

impl KdHeads {
    pub const NAMES: [&'static str; 4] = ["kd.w_t", "kd.w_s", "kd.w_tea", "kd.w_stu"];

    /// Adds the four `2N x N` heads, uniform in `[-0.1, 0.1]`.
    pub fn init<T: Real>(store: &mut ParamStore<T>, embed_dim: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in Self::NAMES {
            let data = (0..2 * embed_dim * embed_dim)
                .map(|_| T::lit(rng.gen_range(-0.1..=0.1)))
                .collect();
            store.insert(name, Tensor::matrix(2 * embed_dim, embed_dim, data)?)?;
        }
        Ok(())
    }

    pub fn is_head(name: &str) -> bool {
        name.starts_with("kd.")
    }

    pub fn bind<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>) -> Result<Self> {
        Ok(KdHeads {
            proj_teacher: g.param(store, Self::NAMES[0])?,
            proj_student: g.param(store, Self::NAMES[1])?,
            pred_teacher: g.param(store, Self::NAMES[2])?,
            pred_student: g.param(store, Self::NAMES[3])?,
        })
    }
}

/// In-batch contrastive loss between `B x 2N` teacher-side and student-side
/// views, summed over the batch:
/// `sum_s -log softmax_j(cos(Wt z_s^tea, Ws z_j^stu) / tau)[s]`.
pub fn contrastive_loss<T: Real>(
    g: &mut Graph<T>,
    z_tea: Var,
    z_stu: Var,
    w_t: Var,
    w_s: Var,
    tau: f64,
) -> Result<Var> {
    let b = g.value(z_tea).dims2().0;
    let pt = g.matmul(z_tea, w_t)?;
    let ps = g.matmul(z_stu, w_s)?;
    let pt = g.normalize_rows(pt, T::lit(COSINE_EPS));
    let ps = g.normalize_rows(ps, T::lit(COSINE_EPS));
    let sim = g.matmul_bt(pt, ps)?;
    let sim = g.scale(sim, T::lit(1.0 / tau));
    let log_p = g.log_softmax(sim);
    let diag: Vec<(usize, usize)> = (0..b).map(|s| (s, s)).collect();
    let pos = g.pick(log_p, &diag)?;
    let total = g.sum(pos);
    Ok(g.scale(total, -T::one()))
}

/// Two recommendation losses on the projected views: the teacher-side view
/// scored against the teacher's items, the student-side view against the
/// student's. Summed over the batch.
#[allow(clippy::too_many_arguments)]
pub fn predictive_loss<T: Real>(
    g: &mut Graph<T>,
    z_tea: Var,
    z_stu: Var,
    w_tea: Var,
    w_stu: Var,
    teacher_table: Var,
    student_table: Var,
    labels: &[usize],
) -> Result<Var> {
    let qt = g.matmul(z_tea, w_tea)?;
    let qs = g.matmul(z_stu, w_stu)?;
    let lt = g.matmul_bt(qt, teacher_table)?;
    let ls = g.matmul_bt(qs, student_table)?;
    let a = rec_loss(g, lt, labels)?;
    let b = rec_loss(g, ls, labels)?;
    g.add(a, b)
}

/// `KL(p_tea || p_stu)` of the catalog softmax distributions, summed over the
/// batch. Teacher logits are taken as constants.
pub fn soft_target_loss<T: Real>(g: &mut Graph<T>, teacher_logits: Var, student_logits: Var) -> Result<Var> {
    let fixed = g.value(teacher_logits).clone();
    let tl = g.constant(fixed);
    let log_pt = g.log_softmax(tl);
    let pt = g.exp(log_pt);
    let log_ps = g.log_softmax(student_logits);
    let diff = g.sub(log_pt, log_ps)?;
    let terms = g.mul(pt, diff)?;
    Ok(g.sum(terms))
}

/// `KL(p || q)` of two probability vectors.
pub fn soft_target_value(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(pv, qv)| pv * (pv / qv).ln())
        .sum()
}

/// Teacher (frozen) and student with their parameters.
#[derive(Debug, Clone, Copy)]
pub struct KdModels<'a, T> {
    pub teacher: &'a SeqModel,
    pub teacher_params: &'a ParamStore<T>,
    pub student: &'a SeqModel,
    pub student_params: &'a ParamStore<T>,
}

/// Batch objective and its components, each divided by the batch size.
#[derive(Debug, Clone, Copy)]
pub struct BatchLosses {
    pub total: Var,
    pub rec: f64,
    pub cl: f64,
    pub pred: f64,
    pub soft: f64,
}

/// Reps of the non-empty sub-sessions, as one `1 x N` var per session.
fn sub_reps<T: Real>(
    g: &mut Graph<T>,
    model: &SeqModel,
    params: &ParamStore<T>,
    table: Var,
    parts: &[Vec<usize>],
) -> Result<Vec<Option<Var>>> {
    let present: Vec<&[usize]> = parts.iter().filter(|p| !p.is_empty()).map(Vec::as_slice).collect();
    if present.is_empty() {
        return Ok(vec![None; parts.len()]);
    }
    let b = model.bind(g, params)?;
    let reps = model.represent_batch(g, &b, table, &present)?;
    let mut row = 0;
    parts
        .iter()
        .map(|p| {
            if p.is_empty() {
                return Ok(None);
            }
            let r = g.slice_rows(reps, row, 1)?;
            row += 1;
            Ok(Some(r))
        })
        .collect()
}

/// Teacher-side and student-side `B x 2N` views of a batch: both models
/// encode the hot and cold sub-sessions of every session and the halves are
/// cross-combined. The teacher runs with dropout suspended.
pub fn recombined_views<T: Real>(
    g: &mut Graph<T>,
    models: &KdModels<'_, T>,
    partition: &HotColdPartition,
    sessions: &[&[usize]],
    teacher_table: Var,
    student_table: Var,
) -> Result<(Var, Var)> {
    let splits: Vec<_> = sessions.iter().map(|s| split_session(s, partition)).collect();
    let hot: Vec<Vec<usize>> = splits.iter().map(|s| s.hot.clone()).collect();
    let cold: Vec<Vec<usize>> = splits.iter().map(|s| s.cold.clone()).collect();
    let suspended = g.dropout_suspended();
    g.suspend_dropout(true);
    let t_hot = sub_reps(g, models.teacher, models.teacher_params, teacher_table, &hot)?;
    let t_cold = sub_reps(g, models.teacher, models.teacher_params, teacher_table, &cold)?;
    g.suspend_dropout(suspended);
    let s_hot = sub_reps(g, models.student, models.student_params, student_table, &hot)?;
    let s_cold = sub_reps(g, models.student, models.student_params, student_table, &cold)?;
    let mut zt_rows = Vec::with_capacity(sessions.len());
    let mut zs_rows = Vec::with_capacity(sessions.len());
    for i in 0..sessions.len() {
        let (zt, zs) = recombine(g, (t_hot[i], t_cold[i]), (s_hot[i], s_cold[i]))?;
        zt_rows.push(zt);
        zs_rows.push(zs);
    }
    Ok((g.concat_rows(&zt_rows)?, g.concat_rows(&zs_rows)?))
}

/// The batch objective
/// `(1/B) [(1 - b3) L_rec + b1 L_cl + b2 L_pred + b3 L_soft]`.
/// Terms with a zero coefficient are not built, so with all coefficients zero
/// the result is exactly the mean recommendation loss.
pub fn joint_loss<T: Real>(
    g: &mut Graph<T>,
    models: &KdModels<'_, T>,
    cfg: &KdConfig,
    partition: &HotColdPartition,
    batch: &[Session],
) -> Result<BatchLosses> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let n_batch = batch.len() as f64;
    let inv_b = T::lit(1.0 / n_batch);
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let sessions: Vec<&[usize]> = batch.iter().map(|s| s.items.as_slice()).collect();

    let student = models.student;
    let sb = student.bind(g, models.student_params)?;
    let s_table = student.item_table(g, &sb)?;
    let s_reps = student.represent_batch(g, &sb, s_table, &sessions)?;
    let s_logits = student.logits(g, s_reps, s_table)?;
    let rec = rec_loss(g, s_logits, &labels)?;
    let mut out = BatchLosses {
        total: rec,
        rec: g.scalar_value(rec).as_f64() / n_batch,
        cl: 0.0,
        pred: 0.0,
        soft: 0.0,
    };
    if cfg.is_disabled() {
        out.total = g.scale(rec, inv_b);
        return Ok(out);
    }
    if models.teacher.config().embed_dim != student.config().embed_dim {
        return Err(Error::config(
            "embed_dim",
            format!(
                "teacher has {}, student has {}",
                models.teacher.config().embed_dim,
                student.config().embed_dim
            ),
        ));
    }

    let mut total = g.scale(rec, T::lit(cfg.rec_weight()));
    let teacher = models.teacher;
    g.suspend_dropout(true);
    let tb = teacher.bind(g, models.teacher_params)?;
    let t_table = teacher.item_table(g, &tb)?;
    g.suspend_dropout(false);

    if cfg.beta3 > 0.0 {
        g.suspend_dropout(true);
        let t_reps = teacher.represent_batch(g, &tb, t_table, &sessions)?;
        let t_logits = teacher.logits(g, t_reps, t_table)?;
        g.suspend_dropout(false);
        let soft = soft_target_loss(g, t_logits, s_logits)?;
        out.soft = g.scalar_value(soft).as_f64() / n_batch;
        let w = g.scale(soft, T::lit(cfg.beta3));
        total = g.add(total, w)?;
    }

    if cfg.beta1 > 0.0 || cfg.beta2 > 0.0 {
        let (z_tea, z_stu) = recombined_views(g, models, partition, &sessions, t_table, s_table)?;
        let heads = KdHeads::bind(g, models.student_params)?;
        if cfg.beta1 > 0.0 {
            let cl = contrastive_loss(g, z_tea, z_stu, heads.proj_teacher, heads.proj_student, cfg.tau)?;
            out.cl = g.scalar_value(cl).as_f64() / n_batch;
            let w = g.scale(cl, T::lit(cfg.beta1));
            total = g.add(total, w)?;
        }
        if cfg.beta2 > 0.0 {
            let pred = predictive_loss(
                g,
                z_tea,
                z_stu,
                heads.pred_teacher,
                heads.pred_student,
                t_table,
                s_table,
                &labels,
            )?;
            out.pred = g.scalar_value(pred).as_f64() / n_batch;
            let w = g.scale(pred, T::lit(cfg.beta2));
            total = g.add(total, w)?;
        }
    }
    out.total = g.scale(total, inv_b);
    Ok(out)
}
