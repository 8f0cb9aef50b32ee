//! Sequential versus rayon execution of the main data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sttdrec::autodiff::kernels::matmul_bt;
use sttdrec::data::{synth_generate, SynthConfig};
use sttdrec::eval::evaluate_with;
use sttdrec::model::{ModelConfig, Predictor, SeqModel};
use sttdrec::par::{with_execution, Execution};
use sttdrec::tt::{student_shape, CoreSet, EmbeddingMode};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn materialize(c: &mut Criterion) {
    let shape = student_shape("tmall", 1, 60, 2).unwrap();
    let cores = CoreSet::<f32>::init(&shape, EmbeddingMode::Sttd, 1).unwrap();
    let mut group = c.benchmark_group("materialize_table");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, "tmall-stu1-60"), |b| {
            b.iter(|| black_box(cores.materialize_table_with(exec)))
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let (m, k, n) = (100, 128, 40728);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<f32> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f32> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut group = c.benchmark_group("score_matmul");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, format!("{m}x{k}x{n}")), |bench| {
            bench.iter(|| with_execution(exec, || black_box(matmul_bt(&a, &b, m, k, n))))
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let cfg = SynthConfig {
        num_items: 2000,
        num_sessions: 3000,
        ..SynthConfig::default()
    };
    let bundle = synth_generate(&cfg, 3).unwrap();
    let mut mc = ModelConfig::dense(bundle.num_items(), 64);
    mc.max_seq_len = 10;
    let model = SeqModel::new(mc).unwrap();
    let params = model.init_params::<f32>(3).unwrap();
    let predictor = Predictor::new(model, &params).unwrap();
    let instances = &bundle.test[..1000.min(bundle.test.len())];
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, instances.len()), |b| {
            b.iter(|| black_box(evaluate_with(&predictor, instances, &[5, 10, 20], exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, materialize, scoring, evaluation);
criterion_main!(benches);
