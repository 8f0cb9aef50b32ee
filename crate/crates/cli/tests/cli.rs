use std::path::Path;
use std::process::{Command, Output};

/// Five sessions; `d` and `e` occur once and are dropped with a minimum count
/// of 2, which leaves s4 empty. Kept: s1 (a b c), s2 (a b), s3 (c a b),
/// s5 (b c a). Prefixes of length 2 come from s1, s3 and s5; 10% of 3 rounds
/// to no validation session. Average length (3 + 2 + 3 + 3) / 4 = 2.75.
const EVENTS: &str = "\
session,item,time
s3,d,4
s1,a,1
s1,b,2
s2,a,5
s3,c,1
s1,c,3
s2,b,6
s3,a,2
s4,e,1
s3,b,3
s5,b,1
s5,c,2
s5,a,3
";

const EXPECTED_STATS: &str = "\
items              3
train sessions     3
train instances    3
valid sessions     0
test sessions      4
average length     2.75
";

fn sttdrec(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sttdrec"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn preprocess(dir: &Path, input: &Path, force: bool) -> Output {
    let out = dir.join("out");
    let mut args = vec![
        "--out",
        out.to_str().unwrap(),
        "preprocess",
        "--input",
        input.to_str().unwrap(),
    ];
    if force {
        args.insert(0, "--force");
    }
    sttdrec(&args, &[("STTDREC_DATA__MIN_ITEM_COUNT", "2")])
}

#[test]
fn preprocess_reports_hand_counted_stats() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("events.csv");
    std::fs::write(&input, EVENTS).unwrap();

    let first = preprocess(dir.path(), &input, false);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(stdout(&first), EXPECTED_STATS);
    let out = dir.path().join("out");
    assert_eq!(std::fs::read_to_string(out.join("stats.txt")).unwrap(), EXPECTED_STATS);
    assert!(out.join("preprocess.config.toml").exists());
    let bundle = std::fs::read(out.join("bundle.bin")).unwrap();

    let refused = preprocess(dir.path(), &input, false);
    assert_eq!(refused.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));

    let again = preprocess(dir.path(), &input, true);
    assert!(again.status.success());
    assert_eq!(std::fs::read(out.join("bundle.bin")).unwrap(), bundle);
}

#[test]
fn missing_input_creates_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = preprocess(dir.path(), &dir.path().join("absent.csv"), false);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.csv"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(sttdrec(&["no-such-command"], &[]).status.code(), Some(2));
    assert_eq!(sttdrec(&["compress-report"], &[]).status.code(), Some(2));
    let bad = sttdrec(&["show-config"], &[("STTDREC_TRAIN__LR", "-1")]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("train.lr"));
    let shape = sttdrec(&["compress-report", "--items", "2,3", "--dims", "2,3", "--rank", "2"], &[]);
    assert_eq!(shape.status.code(), Some(3));
}

#[test]
fn reference_tables_list_every_plan() {
    let o = sttdrec(&["compress-report", "--reference-tables"], &[]);
    assert!(o.status.success());
    let text = stdout(&o);
    for (size, rate) in [("2464", "1039"), ("9408", "272"), ("36736", "70"), ("736", "3478"), ("2592", "988"), ("9664", "265")] {
        assert!(
            text.lines().any(|l| l.split_whitespace().any(|w| w == size) && l.split_whitespace().any(|w| w == rate)),
            "no row with {size} / {rate}"
        );
    }
    assert!(text.contains("stu-3-40"));
    let alias = sttdrec(&["compress-report", "--paper-tables"], &[]);
    assert_eq!(stdout(&alias), text);
}

#[test]
fn custom_shape_report() {
    let o = sttdrec(&["compress-report", "--items", "10,20", "--dims", "8,4", "--rank", "6"], &[]);
    assert!(o.status.success());
    let text = stdout(&o);
    // 200 x 32 table; TTD 10*8*6 + 6*20*4 = 960, STTD 480 + 3*10*4 = 600
    assert!(text.contains(" 960 ") && text.contains(" 600 "), "{text}");
}

const SMALL_RUN: &str = "
seed = 4
[model]
embed_dim = 16
[student]
item_factors = [5, 8]
dim_factors = [4, 4]
rank = 4
stp_divisor = 2
[synth]
num_items = 40
num_sessions = 200
[train]
epochs = 2
[eval]
latency_repetitions = 3
";

#[test]
fn synthetic_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let out = dir.path().join("run");
    let base = ["--preset", "synthetic", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let step = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().copied().chain(extra.iter().copied()).collect();
        let o = sttdrec(&args, &[]);
        assert!(o.status.success(), "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };

    step(&["synth"]);
    step(&["train-teacher"]);
    let teacher = out.join("teacher.ckpt");
    let teacher_bytes = std::fs::read(&teacher).unwrap();
    step(&["distill", "--teacher", teacher.to_str().unwrap()]);
    step(&["distill", "--teacher", teacher.to_str().unwrap(), "--name", "base", "--no-kd"]);
    assert_eq!(std::fs::read(&teacher).unwrap(), teacher_bytes);

    let student = out.join("student.ckpt");
    let eval = step(&["evaluate", "--checkpoint", student.to_str().unwrap(), "--long-tail", "--latency"]);
    assert!(stdout(&eval).contains("P@5"));
    let metrics = std::fs::read_to_string(out.join("student.test.metrics.tsv")).unwrap();
    assert!(metrics.starts_with("metric\tvalue\n"));
    assert!(out.join("student.longtail.tsv").exists());
    assert!(out.join("student.latency.tsv").exists());

    let log = std::fs::read_to_string(out.join("student.log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let report = step(&["report"]);
    assert!(stdout(&report).contains("teacher"));

    let again = sttdrec(
        &base.iter().copied().chain(["evaluate", "--checkpoint", student.to_str().unwrap()]).collect::<Vec<_>>(),
        &[],
    );
    assert_eq!(again.status.code(), Some(4));
}
