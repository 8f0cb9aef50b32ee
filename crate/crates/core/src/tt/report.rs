use serde::Serialize;

use super::shape::{EmbeddingMode, FactorizedShape};
use crate::error::Result;

/// Parameter accounting for one compression plan.
///
/// Two numerators are reported: `params_original = |V| * N` (the real table)
/// and `params_factorized = prod_k I_k * J_k` (the padded table the cores can
/// address). `rate` uses the former, `rate_factorized` the latter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionReport {
    pub mode: EmbeddingMode,
    pub params_original: u64,
    pub params_factorized: u64,
    pub params_compressed: u64,
    pub rate: f64,
    pub rate_factorized: f64,
    pub per_core_sizes: Vec<u64>,
}

pub fn compression_report(shape: &FactorizedShape, mode: EmbeddingMode) -> Result<CompressionReport> {
    shape.validate_for(mode)?;
    let per_core_sizes: Vec<u64> = shape
        .core_extents(mode)
        .iter()
        .map(|e| e.iter().product::<usize>() as u64)
        .collect();
    let params_compressed = shape.param_count(mode) as u64;
    debug_assert_eq!(params_compressed, per_core_sizes.iter().sum::<u64>());
    let params_original = (shape.num_items * shape.embed_dim) as u64;
    let params_factorized = (shape.padded_items() * shape.embed_dim) as u64;
    Ok(CompressionReport {
        mode,
        params_original,
        params_factorized,
        params_compressed,
        rate: params_original as f64 / params_compressed as f64,
        rate_factorized: params_factorized as f64 / params_compressed as f64,
        per_core_sizes,
    })
}

/// A named built-in compression plan.
#[derive(Debug, Clone)]
pub struct ReferenceConfig {
    pub dataset: &'static str,
    pub group: &'static str,
    pub label: String,
    pub shape: FactorizedShape,
}

/// The 20,000 x 128 example table, factorized as (10,10,25,8) x (4,4,4,2),
/// at ranks 4, 8 and 16 with divisor 2. Returns `(rank, ttd_shape, sttd_shape)`.
pub fn reference_size_table() -> Vec<(usize, FactorizedShape, FactorizedShape)> {
    [4, 8, 16]
        .into_iter()
        .map(|r| {
            let ttd = FactorizedShape::new(vec![10, 10, 25, 8], vec![4, 4, 4, 2], r, 1, None)
                .expect("valid reference shape");
            let sttd = FactorizedShape { stp_divisor: 2, ..ttd.clone() };
            (r, ttd, sttd)
        })
        .collect()
}

const TMALL_ITEMS: usize = 40728;
const RETAIL_ITEMS: usize = 36968;

fn student_factors(dataset: &str, student: usize) -> (Vec<usize>, Vec<usize>) {
    match (dataset, student) {
        ("tmall", 1) => (vec![169, 241], vec![16, 8]),
        ("tmall", 2) => (vec![169, 241], vec![32, 4]),
        ("tmall", 3) => (vec![13, 13, 241], vec![8, 4, 4]),
        ("tmall", 4) => (vec![13, 13, 241], vec![8, 8, 2]),
        ("retailrocket", 1) => (vec![117, 316], vec![16, 16]),
        ("retailrocket", 2) => (vec![117, 316], vec![32, 8]),
        ("retailrocket", 3) => (vec![18, 26, 79], vec![8, 8, 4]),
        ("retailrocket", 4) => (vec![18, 26, 79], vec![16, 4, 4]),
        _ => unreachable!("unknown student {dataset}/{student}"),
    }
}

/// Builds the student plan `stu-{student}` for a dataset at rank `r` and divisor `n`.
pub fn student_shape(dataset: &str, student: usize, rank: usize, n: usize) -> Result<FactorizedShape> {
    let (items, dims) = student_factors(dataset, student);
    let num_items = if dataset == "tmall" { TMALL_ITEMS } else { RETAIL_ITEMS };
    FactorizedShape::new(items, dims, rank, n, Some(num_items))
}

/// Built-in student plans for both catalogues, grouped by what varies:
/// factorization shape, TT-rank, and semi-tensor-product divisor.
pub fn reference_student_configs() -> Vec<ReferenceConfig> {
    let mut out = Vec::new();
    let mut push = |dataset: &'static str, group: &'static str, st: usize, r: usize, n: usize| {
        out.push(ReferenceConfig {
            dataset,
            group,
            label: if group == "divisor" {
                format!("stu-{st} {r}-{n}")
            } else {
                format!("stu-{st}-{r}")
            },
            shape: student_shape(dataset, st, r, n).expect("valid reference shape"),
        });
    };
    for st in 1..=4 {
        push("tmall", "shape", st, 60, 2);
    }
    for st in 1..=4 {
        push("retailrocket", "shape", st, 100, 2);
    }
    for (st, r) in [(1, 20), (1, 40), (1, 60), (3, 60), (3, 80), (3, 100)] {
        push("tmall", "rank", st, r, 2);
    }
    for (st, r) in [(1, 40), (1, 60), (1, 80), (3, 40), (3, 60), (3, 80)] {
        push("retailrocket", "rank", st, r, 2);
    }
    for dataset in ["tmall", "retailrocket"] {
        for (r, n) in [(40, 2), (40, 4), (60, 2), (60, 4)] {
            push(dataset, "divisor", 1, r, n);
        }
    }
    out
}
