//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use sttdrec::autodiff::ParamStore;
use sttdrec::data::Session;
use sttdrec::kd::KdHeads;
use sttdrec::model::{ModelConfig, SeqModel};
use sttdrec::tt::{EmbeddingMode, FactorizedShape};

/// Twelve click sessions, rows deliberately out of order. Items `x`, `y`, `z`
/// occur fewer than five times; `s04` and `s11` consist only of them and `s07`
/// keeps a single item after filtering.
pub const FIXTURE_CSV: &str = "\
session,item,time
s12,D,1
s01,D,40
s03,B,5
s01,C,30
s02,A,1
s12,C,2
s01,B,20
s04,x,1
s05,C,1
s01,A,10
s02,B,2
s03,C,6
s02,x,3
s04,y,2
s03,D,7
s03,A,8
s05,D,2
s06,D,1
s06,A,2
s06,B,3
s06,C,4
s07,z,1
s07,A,2
s08,A,1
s08,C,2
s09,B,1
s09,D,2
s09,B,2
s10,C,1
s10,A,2
s10,D,3
s11,y,1
s11,z,2
s11,x,3
s12,B,3
s12,A,4
";

// Counts: A 8, B 7, C 7, D 7, x 3, y 2, z 2. Surviving sessions in key order
// with ids by first appearance (A=0, B=1, C=2, D=3):
//   s01 [0 1 2 3]  s02 [0 1]  s03 [1 2 3 0]  s05 [2 3]  s06 [3 0 1 2]
//   s08 [0 2]      s09 [1 3 1]  s10 [2 0 3]  s12 [3 2 1 0]
pub const FIXTURE_VOCAB: [&str; 4] = ["A", "B", "C", "D"];

pub fn fixture_sessions() -> Vec<Vec<usize>> {
    vec![
        vec![0, 1, 2, 3],
        vec![0, 1],
        vec![1, 2, 3, 0],
        vec![2, 3],
        vec![3, 0, 1, 2],
        vec![0, 2],
        vec![1, 3, 1],
        vec![2, 0, 3],
        vec![3, 2, 1, 0],
    ]
}

/// Last item of every surviving session.
pub fn fixture_test() -> Vec<Session> {
    vec![
        Session::new(vec![0, 1, 2], 3),
        Session::new(vec![0], 1),
        Session::new(vec![1, 2, 3], 0),
        Session::new(vec![2], 3),
        Session::new(vec![3, 0, 1], 2),
        Session::new(vec![0], 2),
        Session::new(vec![1, 3], 1),
        Session::new(vec![2, 0], 3),
        Session::new(vec![3, 2, 1], 0),
    ]
}

/// Training prefixes with at least two items; 10% of six rounds to one
/// held out for validation.
pub fn fixture_long_prefixes() -> Vec<Vec<usize>> {
    vec![
        vec![0, 1, 2],
        vec![1, 2, 3],
        vec![3, 0, 1],
        vec![1, 3],
        vec![2, 0],
        vec![3, 2, 1],
    ]
}

/// Augmented instances of each long prefix, in the same order.
pub fn fixture_augmented() -> Vec<Vec<Session>> {
    vec![
        vec![Session::new(vec![0], 1), Session::new(vec![0, 1], 2)],
        vec![Session::new(vec![1], 2), Session::new(vec![1, 2], 3)],
        vec![Session::new(vec![3], 0), Session::new(vec![3, 0], 1)],
        vec![Session::new(vec![1], 3)],
        vec![Session::new(vec![2], 0)],
        vec![Session::new(vec![3], 2), Session::new(vec![3, 2], 1)],
    ]
}

/// Item counts over all nine training prefixes, including single-item ones.
pub const FIXTURE_POPULARITY: [u64; 4] = [5, 5, 5, 4];

/// Mean full-session length, 28 / 9.
pub const FIXTURE_AVG_LENGTH: f64 = 28.0 / 9.0;

pub const TINY_ITEMS: usize = 12;
pub const TINY_DIM: usize = 8;

pub fn tiny_teacher_config() -> ModelConfig {
    ModelConfig {
        max_seq_len: 5,
        num_heads: 2,
        ..ModelConfig::dense(TINY_ITEMS, TINY_DIM)
    }
}

/// Two-core STTD student over the tiny catalogue: items (3, 4), dims (4, 2).
pub fn tiny_student_config() -> ModelConfig {
    let shape = FactorizedShape::new(vec![3, 4], vec![4, 2], 4, 2, Some(TINY_ITEMS)).unwrap();
    tiny_teacher_config().compressed(EmbeddingMode::Sttd, shape)
}

pub struct TinyKd {
    pub teacher: SeqModel,
    pub teacher_params: ParamStore<f64>,
    pub student: SeqModel,
    pub student_params: ParamStore<f64>,
    pub popularity: Vec<u64>,
    pub batch: Vec<Session>,
}

/// Teacher, student with heads, a popularity vector and a batch of three
/// sessions that mix hot and cold items (one of them single-type).
pub fn tiny_kd(seed: u64) -> TinyKd {
    let teacher = SeqModel::new(tiny_teacher_config()).unwrap();
    let student = SeqModel::new(tiny_student_config()).unwrap();
    let mut teacher_params = teacher.init_params::<f64>(seed).unwrap();
    teacher_params.freeze();
    let mut student_params = student.init_params::<f64>(seed + 100).unwrap();
    KdHeads::init(&mut student_params, TINY_DIM, seed + 200).unwrap();
    let popularity = (0..TINY_ITEMS as u64).map(|i| 40 - 3 * i).collect();
    let batch = vec![
        Session::new(vec![0, 7, 1, 9], 2),
        Session::new(vec![5, 8, 11], 0),
        Session::new(vec![1, 0], 10),
    ];
    TinyKd {
        teacher,
        teacher_params,
        student,
        student_params,
        popularity,
        batch,
    }
}
