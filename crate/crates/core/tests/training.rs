use sttdrec::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use sttdrec::config::RunConfig;
use sttdrec::data::{synth_generate, DatasetBundle, SynthConfig};
use sttdrec::eval::evaluate;
use sttdrec::kd::KdConfig;
use sttdrec::model::{Predictor, SeqModel};
use sttdrec::train::{append_log, distill, parse_log, train_teacher, TrainConfig};

fn setup() -> (RunConfig, DatasetBundle) {
    let mut cfg = RunConfig::synthetic();
    cfg.model.embed_dim = 16;
    cfg.student.item_factors = vec![6, 10];
    cfg.student.dim_factors = vec![4, 4];
    cfg.student.rank = 4;
    let synth = SynthConfig {
        num_items: 60,
        num_sessions: 300,
        sharpness: f64::INFINITY,
        ..SynthConfig::default()
    };
    (cfg, synth_generate(&synth, 21).unwrap())
}

fn epochs(n: usize) -> TrainConfig {
    TrainConfig {
        epochs: n,
        patience: n,
        ..TrainConfig::default()
    }
}

#[test]
fn teacher_loss_falls_and_run_is_reproducible() {
    let (cfg, bundle) = setup();
    let model = SeqModel::new(cfg.teacher_config(bundle.num_items())).unwrap();
    let mut seen = Vec::new();
    let a = train_teacher(&model, &bundle, &epochs(5), 3, |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4, 5]);
    assert_eq!(a.log.len(), 5);
    assert!(a.log[4].total < a.log[0].total, "{:?}", a.log);
    assert!(a.diverged.is_none());
    // teacher training only has the recommendation term
    assert!(a.log.iter().all(|r| r.cl == 0.0 && r.pred == 0.0 && r.soft == 0.0));

    let b = train_teacher(&model, &bundle, &epochs(5), 3, |_| {}).unwrap();
    assert_eq!(a.params.checksum(), b.params.checksum());
}

#[test]
fn checkpoint_round_trip_keeps_metrics() {
    let (cfg, bundle) = setup();
    let model = SeqModel::new(cfg.teacher_config(bundle.num_items())).unwrap();
    let out = train_teacher(&model, &bundle, &epochs(2), 5, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("teacher.ckpt");
    let ck = Checkpoint {
        kind: "teacher".into(),
        model: model.config().clone(),
        meta: [("seed".to_string(), "5".to_string())].into_iter().collect(),
        params: out.params.clone(),
    };
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.kind, "teacher");
    assert_eq!(back.meta, ck.meta);
    assert_eq!(back.params.checksum(), out.params.checksum());

    let restored = SeqModel::new(back.model.clone()).unwrap();
    let before = evaluate(&Predictor::new(model, &out.params).unwrap(), &bundle.test, &[5, 10, 20]).unwrap();
    let after = evaluate(&Predictor::new(restored, &back.params).unwrap(), &bundle.test, &[5, 10, 20]).unwrap();
    assert_eq!(before, after);
}

#[test]
fn distillation_records_every_term() {
    let (cfg, bundle) = setup();
    let n = bundle.num_items();
    let teacher = SeqModel::new(cfg.teacher_config(n)).unwrap();
    let student = SeqModel::new(cfg.student_config(n).unwrap()).unwrap();
    let t = train_teacher(&teacher, &bundle, &epochs(1), 8, |_| {}).unwrap();
    let full = distill(&teacher, &t.params, &student, &bundle, &KdConfig::default(), &epochs(2), 8, |_| {}).unwrap();
    assert!(full.log.iter().all(|r| r.cl > 0.0 && r.pred > 0.0 && r.soft >= 0.0));
    assert!(full.params.names().any(|name| name.starts_with("kd.")));

    let base = distill(&teacher, &t.params, &student, &bundle, &KdConfig::disabled(), &epochs(2), 8, |_| {}).unwrap();
    assert!(base.log.iter().all(|r| r.cl == 0.0 && r.pred == 0.0 && r.soft == 0.0));
}

#[test]
fn distillation_rejects_other_catalog() {
    let (cfg, bundle) = setup();
    let teacher = SeqModel::new(cfg.teacher_config(bundle.num_items() + 1)).unwrap();
    let params = teacher.init_params::<f32>(1).unwrap();
    let student = SeqModel::new(cfg.student_config(bundle.num_items()).unwrap()).unwrap();
    let e = distill(&teacher, &params, &student, &bundle, &KdConfig::default(), &epochs(1), 1, |_| {});
    assert!(e.is_err());
}

#[test]
fn log_appends_and_parses() {
    let (cfg, bundle) = setup();
    let model = SeqModel::new(cfg.teacher_config(bundle.num_items())).unwrap();
    let out = train_teacher(&model, &bundle, &epochs(2), 2, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.log.tsv");
    append_log(&path, &out.log[..1]).unwrap();
    append_log(&path, &out.log[1..]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("epoch")).count(), 1);
    let parsed = parse_log(&text).unwrap();
    assert_eq!(parsed.len(), 2);
    for (p, r) in parsed.iter().zip(&out.log) {
        assert_eq!(p.epoch, r.epoch);
        assert!((p.total - r.total).abs() < 1e-6);
    }
}
