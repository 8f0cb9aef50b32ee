//! `sttdrec` command-line driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sttdrec::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use sttdrec::config::RunConfig;
use sttdrec::data::{
    bundle_digest, ingest, preprocess, read_bundle, split, synth_generate, write_bundle,
    DatasetBundle, Session,
};
use sttdrec::error::ErrorKind;
use sttdrec::eval::{evaluate, latency_benchmark, long_tail_report, LongTailReport};
use sttdrec::kd::{KdConfig, KdHeads};
use sttdrec::model::{Predictor, SeqModel};
use sttdrec::train::{append_log, distill, parse_log, train_teacher, EpochRecord, TrainOutcome};
use sttdrec::tt::{
    compression_report, reference_size_table, reference_student_configs, EmbeddingMode,
    FactorizedShape,
};

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

const BUNDLE_FILE: &str = "bundle.bin";
const TEACHER_NAME: &str = "teacher";

#[derive(Parser)]
#[command(
    name = "sttdrec",
    version,
    about = "Compressed session-based recommenders: data preparation, training, distillation and evaluation"
)]
struct Cli {
    /// TOML configuration file, applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base preset: tmall, retailrocket or synthetic.
    #[arg(long, global = true, default_value = "tmall")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `out` from the config, else `runs`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a click log, filter, split and augment it into a bundle.
    Preprocess {
        /// Event log with a header line (default: `data.input`).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        delimiter: Option<char>,
    },
    /// Generate a synthetic bundle from the `synth` section.
    Synth,
    /// Train the dense teacher.
    TrainTeacher {
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Train a compressed student against a trained teacher.
    Distill(DistillArgs),
    /// Ranking metrics of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Parameter counts and compression rates of a factorization.
    CompressReport(CompressArgs),
    /// Single-thread prediction latency of a checkpoint.
    Benchmark {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Summarize a training log and write curve data.
    Report {
        /// Log file (default: every `*.log.tsv` in the output directory).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    ShowConfig,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Teacher checkpoint (default: `teacher.ckpt` in the output directory).
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Output stem for the checkpoint and log.
    #[arg(long, default_value = "student")]
    name: String,
    /// Drop the contrastive term.
    #[arg(long)]
    no_cl: bool,
    /// Drop the predictive term.
    #[arg(long)]
    no_pred: bool,
    /// Drop the soft-target term.
    #[arg(long)]
    no_soft: bool,
    /// Plain recommendation loss only.
    #[arg(long)]
    no_kd: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    fn label(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }

    fn instances(self, b: &DatasetBundle) -> &[Session] {
        match self {
            SplitName::Train => &b.train,
            SplitName::Valid => &b.valid,
            SplitName::Test => &b.test,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
    /// Add the popular / long-tail breakdown of P@5.
    #[arg(long)]
    long_tail: bool,
    /// Add the 100-session latency figure.
    #[arg(long)]
    latency: bool,
}

#[derive(Args)]
struct CompressArgs {
    /// Item factors, comma separated.
    #[arg(long, value_delimiter = ',')]
    items: Vec<usize>,
    /// Embedding-dimension factors, comma separated.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long)]
    rank: Option<usize>,
    /// Semi-tensor-product divisor.
    #[arg(long, default_value_t = 2)]
    divisor: usize,
    /// Catalogue size (default: product of the item factors).
    #[arg(long)]
    num_items: Option<usize>,
    /// ttd or sttd (default: both).
    #[arg(long)]
    mode: Option<EmbeddingMode>,
    /// Print the built-in reference size table and student plans.
    #[arg(long, alias = "paper-tables")]
    reference_tables: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Exists(PathBuf),
    Mismatch(String),
    Diverged(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Exists(p) => write!(f, "{} exists; pass --force to overwrite", p.display()),
            CliError::Mismatch(m) => write!(f, "checkpoint and bundle do not match: {m}"),
            CliError::Diverged(m) => write!(f, "training diverged: {m}; kept the last good state"),
        }
    }
}

impl std::error::Error for CliError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sttdrec::Error>() {
            return match e.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Io => EXIT_IO,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            };
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Exists(_) => EXIT_IO,
                CliError::Mismatch(_) => EXIT_CONFIG,
                CliError::Diverged(_) => EXIT_NUMERICAL,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_OTHER
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain joined with `: `, skipping causes the previous message already shows.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    force: bool,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Fails if any of `paths` exists and `--force` was not given.
    fn guard(&self, paths: &[&Path]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(CliError::Exists(p.to_path_buf()).into());
        }
        Ok(())
    }

    fn create_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| sttdrec::Error::io(&self.out, e))
            .map_err(Into::into)
    }

    fn bundle(&self, arg: &Option<PathBuf>) -> Result<(PathBuf, DatasetBundle)> {
        let path = arg.clone().unwrap_or_else(|| self.path(BUNDLE_FILE));
        let bundle = read_bundle(&path).with_context(|| "loading bundle")?;
        Ok((path, bundle))
    }

    /// Writes the resolved configuration next to an output.
    fn save_config(&self, stem: &str) -> Result<()> {
        let path = self.path(&format!("{stem}.config.toml"));
        std::fs::write(&path, self.cfg.to_toml()?).map_err(|e| sttdrec::Error::io(&path, e))?;
        Ok(())
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let base = RunConfig::preset(&cli.preset)?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, &base)?,
        None => base,
    };
    cfg = cfg.with_env()?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::CompressReport(args) = &cli.command {
        return cmd_compress_report(args);
    }
    let cfg = resolve_config(&cli)?;
    let ctx = Ctx {
        out: cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs")),
        cfg,
        force: cli.force,
    };
    match cli.command {
        Command::Preprocess { input, delimiter } => cmd_preprocess(&ctx, input, delimiter),
        Command::Synth => cmd_synth(&ctx),
        Command::TrainTeacher { bundle } => cmd_train_teacher(&ctx, &bundle),
        Command::Distill(args) => cmd_distill(&ctx, &args),
        Command::Evaluate(args) => cmd_evaluate(&ctx, &args),
        Command::Benchmark {
            checkpoint,
            bundle,
            repetitions,
        } => cmd_benchmark(&ctx, &checkpoint, &bundle, repetitions),
        Command::Report { log } => cmd_report(&ctx, log),
        Command::ShowConfig => {
            print!("{}", ctx.cfg.to_toml()?);
            Ok(())
        }
        Command::CompressReport(_) => unreachable!("handled above"),
    }
}

fn write_dataset(ctx: &Ctx, bundle: &DatasetBundle, stem: &str) -> Result<()> {
    let stats = bundle.stats();
    println!("{stats}");
    write_bundle(&ctx.path(BUNDLE_FILE), bundle)?;
    let stats_path = ctx.path("stats.txt");
    std::fs::write(&stats_path, format!("{stats}\n")).map_err(|e| sttdrec::Error::io(&stats_path, e))?;
    ctx.save_config(stem)
}

fn cmd_preprocess(ctx: &Ctx, input: Option<PathBuf>, delimiter: Option<char>) -> Result<()> {
    let input = input
        .or_else(|| ctx.cfg.data.input.clone())
        .ok_or_else(|| CliError::Usage("no input: pass --input or set data.input".into()))?;
    let bundle_path = ctx.path(BUNDLE_FILE);
    ctx.guard(&[&bundle_path])?;
    let mut format = ctx.cfg.data.format.clone();
    if let Some(d) = delimiter {
        format.delimiter = d;
    }
    let raw = ingest(&input, &format)?;
    let pre = preprocess(&raw, ctx.cfg.data.min_item_count, ctx.cfg.data.min_session_len)?;
    let bundle = split(pre, &ctx.cfg.split_config())?;
    ctx.create_out()?;
    write_dataset(ctx, &bundle, "preprocess")
}

fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let bundle_path = ctx.path(BUNDLE_FILE);
    ctx.guard(&[&bundle_path])?;
    let bundle = synth_generate(&ctx.cfg.synth, ctx.cfg.seed)?;
    ctx.create_out()?;
    write_dataset(ctx, &bundle, "synth")
}

fn log_epoch(path: &Path, tag: &str, r: &EpochRecord) {
    eprintln!(
        "[{tag}] epoch {:>3}  total {:.5}  rec {:.5}  val P@5 {:.2}  ({:.1}s)",
        r.epoch, r.total, r.rec, r.val_p5, r.wall_s
    );
    if let Err(e) = append_log(path, std::slice::from_ref(r)) {
        eprintln!("warning: could not append to log: {e}");
    }
}

fn finish_training(
    ctx: &Ctx,
    ckpt_path: &Path,
    kind: &str,
    model: &SeqModel,
    outcome: &TrainOutcome,
    params: sttdrec::autodiff::ParamStore<f32>,
    mut meta: BTreeMap<String, String>,
) -> Result<()> {
    meta.insert("seed".into(), ctx.cfg.seed.to_string());
    meta.insert("best_epoch".into(), outcome.best_epoch.to_string());
    meta.insert("params_checksum".into(), params.checksum());
    if let Some(r) = outcome.log.iter().find(|r| r.epoch == outcome.best_epoch) {
        meta.insert("val_p5".into(), format!("{:.4}", r.val_p5));
    }
    let ck = Checkpoint {
        kind: kind.into(),
        model: model.config().clone(),
        meta,
        params,
    };
    save_checkpoint(ckpt_path, &ck)?;
    println!(
        "{kind}: {} epochs, best epoch {}, checkpoint {}",
        outcome.log.len(),
        outcome.best_epoch,
        ckpt_path.display()
    );
    if let Some(msg) = &outcome.diverged {
        return Err(CliError::Diverged(msg.clone()).into());
    }
    Ok(())
}

fn cmd_train_teacher(ctx: &Ctx, bundle_arg: &Option<PathBuf>) -> Result<()> {
    let ckpt_path = ctx.path(&format!("{TEACHER_NAME}.ckpt"));
    ctx.guard(&[&ckpt_path])?;
    let (_, bundle) = ctx.bundle(bundle_arg)?;
    let model = SeqModel::new(ctx.cfg.teacher_config(bundle.num_items()))?;
    ctx.create_out()?;
    ctx.save_config(TEACHER_NAME)?;
    let log_path = ctx.path(&format!("{TEACHER_NAME}.log.tsv"));
    let outcome = train_teacher(&model, &bundle, &ctx.cfg.train, ctx.cfg.seed, |r| {
        log_epoch(&log_path, TEACHER_NAME, r)
    })?;
    let mut meta = BTreeMap::new();
    meta.insert("bundle_digest".into(), bundle_digest(&bundle)?);
    let params = outcome.params.clone();
    finish_training(ctx, &ckpt_path, TEACHER_NAME, &model, &outcome, params, meta)
}

fn kd_for(base: &KdConfig, args: &DistillArgs) -> KdConfig {
    if args.no_kd {
        return KdConfig {
            hot_fraction: base.hot_fraction,
            tau: base.tau,
            ..KdConfig::disabled()
        };
    }
    let mut kd = base.clone();
    if args.no_cl {
        kd.beta1 = 0.0;
    }
    if args.no_pred {
        kd.beta2 = 0.0;
    }
    if args.no_soft {
        kd.beta3 = 0.0;
    }
    kd
}

fn check_compat(ck: &Checkpoint, bundle: &DatasetBundle, digest: &str) -> Result<()> {
    if ck.model.num_items != bundle.num_items() {
        return Err(CliError::Mismatch(format!(
            "checkpoint scores {} items, bundle has {}",
            ck.model.num_items,
            bundle.num_items()
        ))
        .into());
    }
    if let Some(d) = ck.meta.get("bundle_digest") {
        if d != digest {
            return Err(CliError::Mismatch("checkpoint was trained on a different bundle".into()).into());
        }
    }
    Ok(())
}

fn cmd_distill(ctx: &Ctx, args: &DistillArgs) -> Result<()> {
    let ckpt_path = ctx.path(&format!("{}.ckpt", args.name));
    ctx.guard(&[&ckpt_path])?;
    let (_, bundle) = ctx.bundle(&args.bundle)?;
    let digest = bundle_digest(&bundle)?;
    let teacher_path = args
        .teacher
        .clone()
        .unwrap_or_else(|| ctx.path(&format!("{TEACHER_NAME}.ckpt")));
    let teacher_ck = load_checkpoint(&teacher_path).with_context(|| "loading teacher")?;
    check_compat(&teacher_ck, &bundle, &digest)?;
    let teacher = SeqModel::new(teacher_ck.model.clone())?;
    let student = SeqModel::new(ctx.cfg.student_config(bundle.num_items())?)?;
    let kd = kd_for(&ctx.cfg.kd, args);
    ctx.create_out()?;
    ctx.save_config(&args.name)?;
    let log_path = ctx.path(&format!("{}.log.tsv", args.name));
    let checksum_before = teacher_ck.params.checksum();
    let outcome = distill(
        &teacher,
        &teacher_ck.params,
        &student,
        &bundle,
        &kd,
        &ctx.cfg.train,
        ctx.cfg.seed,
        |r| log_epoch(&log_path, &args.name, r),
    )?;
    debug_assert_eq!(checksum_before, teacher_ck.params.checksum());
    let shape = student.config().shape.clone().expect("student is factorized");
    let report = compression_report(&shape, student.config().embedding)?;
    let mut meta = BTreeMap::new();
    meta.insert("bundle_digest".into(), digest);
    meta.insert("teacher_checksum".into(), checksum_before);
    meta.insert(
        "kd".into(),
        format!("beta1={} beta2={} beta3={} tau={}", kd.beta1, kd.beta2, kd.beta3, kd.tau),
    );
    meta.insert("compression_rate".into(), format!("{:.2}", report.rate));
    let params = outcome.params.filtered(|n| !KdHeads::is_head(n));
    finish_training(ctx, &ckpt_path, "student", &student, &outcome, params, meta)
}

fn load_predictor(ctx: &Ctx, checkpoint: &Path, bundle_arg: &Option<PathBuf>) -> Result<(Checkpoint, Predictor, DatasetBundle)> {
    let (_, bundle) = ctx.bundle(bundle_arg)?;
    let ck = load_checkpoint(checkpoint).with_context(|| "loading checkpoint")?;
    check_compat(&ck, &bundle, &bundle_digest(&bundle)?)?;
    let model = SeqModel::new(ck.model.clone())?;
    let predictor = Predictor::new(model, &ck.params)?;
    Ok((ck, predictor, bundle))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn long_tail_tsv(r: &LongTailReport) -> String {
    let mut out = String::from("bucket\titems\tinstances\thits\tp5\tcontribution\thit_share\n");
    for (name, items, b) in [
        ("popular", r.popular_items, &r.popular),
        ("long-tail", r.tail_items, &r.tail),
    ] {
        match b {
            Some(b) => out.push_str(&format!(
                "{name}\t{items}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
                b.instances, b.hits, b.precision, b.contribution, b.hit_share
            )),
            None => out.push_str(&format!("{name}\t{items}\t0\t0\tNA\tNA\tNA\n")),
        }
    }
    out
}

fn latency_sessions(bundle: &DatasetBundle) -> Vec<Vec<usize>> {
    bundle.test.iter().map(|s| s.items.clone()).collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| sttdrec::Error::io(path, e))?;
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<()> {
    let name = stem(&args.checkpoint);
    let split = args.split.label();
    let metrics_path = ctx.path(&format!("{name}.{split}.metrics.tsv"));
    let tail_path = ctx.path(&format!("{name}.longtail.tsv"));
    let latency_path = ctx.path(&format!("{name}.latency.tsv"));
    let mut outputs = vec![metrics_path.as_path()];
    if args.long_tail {
        outputs.push(&tail_path);
    }
    if args.latency {
        outputs.push(&latency_path);
    }
    ctx.guard(&outputs)?;
    let (_, predictor, bundle) = load_predictor(ctx, &args.checkpoint, &args.bundle)?;
    let instances = args.split.instances(&bundle);
    if instances.is_empty() {
        return Err(CliError::Usage(format!("the {split} split is empty")).into());
    }
    let table = evaluate(&predictor, instances, &ctx.cfg.eval.cutoffs)?;
    ctx.create_out()?;
    println!("{name} on {split}\n{table}");
    write_text(&metrics_path, &table.to_tsv())?;
    if args.long_tail {
        let report = long_tail_report(&predictor, &bundle.test, &bundle.popularity)?;
        println!("{report}");
        write_text(&tail_path, &long_tail_tsv(&report))?;
    }
    if args.latency {
        let report = latency_benchmark(
            &predictor,
            &latency_sessions(&bundle),
            ctx.cfg.eval.latency_repetitions,
        )?;
        println!("{report}");
        write_text(&latency_path, &latency_tsv(&report))?;
    }
    Ok(())
}

fn latency_tsv(r: &sttdrec::eval::LatencyReport) -> String {
    let mut out = format!("median_seconds\t{:.6}\nrun\tseconds\n", r.median_seconds);
    for (i, s) in r.runs.iter().enumerate() {
        out.push_str(&format!("{}\t{s:.6}\n", i + 1));
    }
    out
}

fn cmd_benchmark(
    ctx: &Ctx,
    checkpoint: &Path,
    bundle_arg: &Option<PathBuf>,
    repetitions: Option<usize>,
) -> Result<()> {
    let name = stem(checkpoint);
    let path = ctx.path(&format!("{name}.latency.tsv"));
    ctx.guard(&[&path])?;
    let (ck, predictor, bundle) = load_predictor(ctx, checkpoint, bundle_arg)?;
    let reps = repetitions.unwrap_or(ctx.cfg.eval.latency_repetitions);
    let report = latency_benchmark(&predictor, &latency_sessions(&bundle), reps)?;
    let embedding: usize = ck
        .params
        .iter()
        .filter(|(n, _)| n.starts_with("item."))
        .map(|(_, p)| p.value().len())
        .sum();
    println!(
        "{name}: {} parameters ({embedding} in the item table, {})",
        ck.params.total_entries(),
        ck.model.embedding
    );
    println!("{report}");
    ctx.create_out()?;
    write_text(&path, &latency_tsv(&report))
}

fn cmd_report(ctx: &Ctx, log: Option<PathBuf>) -> Result<()> {
    let logs = match log {
        Some(p) => vec![p],
        None => {
            let dir = std::fs::read_dir(&ctx.out).map_err(|e| sttdrec::Error::io(&ctx.out, e))?;
            let mut found: Vec<PathBuf> = dir
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.to_string_lossy().ends_with(".log.tsv"))
                .collect();
            found.sort();
            found
        }
    };
    if logs.is_empty() {
        return Err(CliError::Usage(format!("no *.log.tsv files in {}", ctx.out.display())).into());
    }
    println!("run                epochs  best-epoch  best-val-P@5  final-total  wall-s");
    for path in logs {
        let text = std::fs::read_to_string(&path).map_err(|e| sttdrec::Error::io(&path, e))?;
        let records = parse_log(&text).with_context(|| format!("parsing {}", path.display()))?;
        let name = path
            .file_name()
            .map(|f| f.to_string_lossy().trim_end_matches(".log.tsv").to_string())
            .unwrap_or_default();
        let Some(last) = records.last() else {
            println!("{name:<18} empty");
            continue;
        };
        let best = records
            .iter()
            .filter(|r| !r.val_p5.is_nan())
            .max_by(|a, b| a.val_p5.total_cmp(&b.val_p5).then(b.epoch.cmp(&a.epoch)));
        let (best_epoch, best_p5) = best.map_or((0, f64::NAN), |r| (r.epoch, r.val_p5));
        println!(
            "{name:<18} {:>6}  {best_epoch:>10}  {best_p5:>12.2}  {:>11.5}  {:>6.1}",
            records.len(),
            last.total,
            last.wall_s
        );
        let mut curves = String::from("series\tx\ty\n");
        for (series, get) in [
            ("total", (|r: &EpochRecord| r.total) as fn(&EpochRecord) -> f64),
            ("l_rec", |r| r.rec),
            ("val_p5", |r| r.val_p5),
        ] {
            for r in &records {
                curves.push_str(&format!("{series}\t{}\t{}\n", r.epoch, get(r)));
            }
        }
        let curve_path = path.with_file_name(format!("{name}.curves.tsv"));
        write_text(&curve_path, &curves)?;
    }
    Ok(())
}

fn print_report_row(label: &str, shape: &FactorizedShape, mode: EmbeddingMode) -> Result<()> {
    let r = compression_report(shape, mode)?;
    let cores: Vec<String> = r.per_core_sizes.iter().map(|s| s.to_string()).collect();
    println!(
        "{label:<22} {:<5} {:>12} {:>10} {:>10.2} {:>6}  [{}]",
        mode.to_string(),
        r.params_original,
        r.params_compressed,
        r.rate,
        r.rate.round() as u64,
        cores.join(", ")
    );
    Ok(())
}

const REPORT_HEADER: &str = "plan                   mode      original compressed       rate  round  per-core";

fn cmd_compress_report(args: &CompressArgs) -> Result<()> {
    if args.reference_tables {
        println!("20000 x 128 table, items (10,10,25,8), dims (4,4,4,2), divisor 2");
        println!("{REPORT_HEADER}");
        for (r, ttd, sttd) in reference_size_table() {
            print_report_row(&format!("R={r}"), &ttd, EmbeddingMode::Ttd)?;
            print_report_row(&format!("R={r}"), &sttd, EmbeddingMode::Sttd)?;
        }
        let mut current = ("", "");
        for c in reference_student_configs() {
            if (c.dataset, c.group) != current {
                current = (c.dataset, c.group);
                println!(
                    "\n{} ({} items), varying {}",
                    c.dataset, c.shape.num_items, c.group
                );
                println!("{REPORT_HEADER}");
            }
            print_report_row(&c.label, &c.shape, EmbeddingMode::Sttd)?;
        }
        return Ok(());
    }
    if args.items.is_empty() || args.dims.is_empty() {
        return Err(CliError::Usage(
            "pass --items and --dims (and --rank), or --reference-tables".into(),
        )
        .into());
    }
    let rank = args
        .rank
        .ok_or_else(|| CliError::Usage("--rank is required".into()))?;
    let modes = match args.mode {
        Some(EmbeddingMode::Dense) => {
            return Err(sttdrec::Error::config("mode", "dense tables are not factorized").into())
        }
        Some(m) => vec![m],
        None => vec![EmbeddingMode::Ttd, EmbeddingMode::Sttd],
    };
    println!("{REPORT_HEADER}");
    for mode in modes {
        let divisor = if mode == EmbeddingMode::Ttd { 1 } else { args.divisor };
        let shape = FactorizedShape::new(
            args.items.clone(),
            args.dims.clone(),
            rank,
            divisor,
            args.num_items,
        )?;
        shape.validate_for(mode)?;
        print_report_row(&format!("R={rank} n={divisor}"), &shape, mode)?;
    }
    Ok(())
}
