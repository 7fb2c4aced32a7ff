use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use atms_kd::config::{ResolvedConfig, RunConfig};
use atms_kd::data::{export_folder, generate_synthetic, load_folder, split};
use atms_kd::distill::{parse_grid, temperature_sensitivity, Probe, SensitivityTable};
use atms_kd::metrics::{benchmark_inference, confusion, model_size_mb, EvalReport};
use atms_kd::model::{load_checkpoint, save_checkpoint, Checkpoint};
use atms_kd::tensor::gemm;
use atms_kd::train::{
    direct_train_student, distill_student, fixed_temp_distill, train_teacher, TrainConfig, TrainMode, TrainReport,
};
use atms_kd::{Dataset64, KdError};
use serde::Serialize;

use crate::exit::usage;
use crate::{
    AnalyzeArgs, BenchArgs, Command, CompareArgs, DataArgs, EvaluateArgs, FixedArgs, GenDataArgs, ProbeChoice,
    RunArgs, SplitChoice, StudentArgs,
};

pub fn run(command: Command) -> Result<()> {
    gemm::set_num_threads(threads_from_env()?);
    match command {
        Command::GenData(a) => gen_data(&a),
        Command::TrainTeacher(a) => train(&a.run, Arm::Teacher),
        Command::Distill(a) => train_student(&a, Arm::Atms),
        Command::TrainDirect(a) => train_student(&a, Arm::Direct),
        Command::DistillFixed(a) => train_fixed(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Bench(a) => bench(&a),
        Command::AnalyzeTemperature(a) => analyze(&a),
        Command::Compare(a) => compare(&a),
    }
}

fn threads_from_env() -> Result<usize> {
    match std::env::var("ATMSKD_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(usage(format!("ATMSKD_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let ds = generate_synthetic::<f64>(a.n_per_class, a.size, a.seed)?;
    export_folder(&ds, &a.out)?;
    println!("wrote {} images in {} classes to {}", ds.len(), ds.num_classes(), a.out.display());
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Arm {
    Teacher,
    Atms,
    Direct,
    Fixed,
}

/// Folds command-line flags into the file config before resolving, so the
/// echoed config shows what actually ran.
fn resolve(run: &RunArgs, arm: Arm, width: Option<f64>, tau: Option<f64>) -> Result<ResolvedConfig> {
    let mut cfg = load_config(run.config.as_deref())?;
    let phase = if arm == Arm::Teacher { &mut cfg.train.teacher } else { &mut cfg.train.student };
    phase.epochs = run.epochs.or(phase.epochs);
    phase.batch_size = run.batch_size.or(phase.batch_size);
    phase.lr = run.lr.or(phase.lr);
    cfg.train.seed = run.seed.or(cfg.train.seed);
    cfg.model.width = width.or(cfg.model.width);
    cfg.kd.tau_fixed = tau.or(cfg.kd.tau_fixed);
    Ok(cfg.resolve()?)
}

fn load_splits(data: &Path, cfg: &ResolvedConfig, image_size: usize) -> Result<(Dataset64, Dataset64, Dataset64)> {
    let (ds, stats) = load_folder::<f64>(data, image_size)?;
    if !stats.skipped.is_empty() {
        log::warn!("skipped {} unreadable files", stats.skipped.len());
    }
    log::info!("loaded {} images from {}", stats.loaded, data.display());
    Ok(split(&ds, &cfg.data.split)?)
}

fn train(run: &RunArgs, arm: Arm) -> Result<()> {
    let cfg = resolve(run, arm, None, None)?;
    let (tr, va, _) = load_splits(&run.data, &cfg, cfg.data.image_size)?;
    let (ckpt, report) = train_teacher(&tr, &va, &cfg.teacher)?;
    finish(&run.out, &cfg, "teacher.ckpt", &ckpt, &report)
}

fn train_student(a: &StudentArgs, arm: Arm) -> Result<()> {
    let cfg = resolve(&a.run, arm, a.width, None)?;
    student_run(a, arm, &cfg)
}

fn train_fixed(a: &FixedArgs) -> Result<()> {
    let cfg = resolve(&a.student.run, Arm::Fixed, a.student.width, a.tau)?;
    student_run(&a.student, Arm::Fixed, &cfg)
}

fn student_run(a: &StudentArgs, arm: Arm, cfg: &ResolvedConfig) -> Result<()> {
    let teacher = match (arm, &a.teacher) {
        (Arm::Direct, _) => None,
        (_, Some(path)) => Some(load_checkpoint::<f64>(path)?),
        (_, None) => return Err(usage("--teacher is required for distillation")),
    };
    let (tr, va, _) = load_splits(&a.run.data, cfg, cfg.data.image_size)?;
    let direct = TrainConfig { mode: TrainMode::Direct, ..cfg.student };
    let (ckpt, report) = match (arm, &teacher) {
        (Arm::Atms, Some(t)) => distill_student(t, cfg.width, &tr, &va, &cfg.distill, &cfg.student)?,
        (Arm::Fixed, Some(t)) => fixed_temp_distill(t, cfg.width, &tr, &va, cfg.tau_fixed, &cfg.distill, &cfg.student)?,
        _ => direct_train_student(cfg.width, &tr, &va, &cfg.distill, &direct)?,
    };
    finish(&a.run.out, cfg, "student.ckpt", &ckpt, &report)
}

fn finish(out: &Path, cfg: &ResolvedConfig, name: &str, ckpt: &Checkpoint<f64>, report: &TrainReport) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_checkpoint(&ckpt.network, &ckpt.meta, &out.join(name))?;
    report.write(out)?;
    cfg.echo(out)?;
    let tau = match (report.records.first().and_then(|r| r.tau), report.records.last().and_then(|r| r.tau)) {
        (Some(a), Some(b)) => format!(", tau {a:.2} -> {b:.2}"),
        _ => String::new(),
    };
    println!(
        "{}: best val {:.2}% at epoch {}{tau}; wrote {}",
        report.method.as_str(),
        report.best_val_accuracy,
        report.best_epoch,
        out.display()
    );
    Ok(())
}

/// Loads the checkpoint and the chosen split at the checkpoint's input size.
fn checkpoint_and_split(ckpt: &Path, data: &DataArgs, which: SplitChoice) -> Result<(Checkpoint<f64>, Dataset64)> {
    let ckpt = load_checkpoint::<f64>(ckpt)?;
    let cfg = load_config(data.config.as_deref())?.resolve()?;
    let size = ckpt.network.spec().input_size;
    let ds = match which {
        SplitChoice::All => load_folder::<f64>(&data.data, size)?.0,
        other => {
            let (tr, va, te) = load_splits(&data.data, &cfg, size)?;
            match other {
                SplitChoice::Train => tr,
                SplitChoice::Val => va,
                _ => te,
            }
        }
    };
    let classes = ckpt.network.spec().num_classes;
    if classes != ds.num_classes() {
        return Err(KdError::Mismatch(format!("checkpoint has {classes} classes, data has {}", ds.num_classes())).into());
    }
    Ok((ckpt, ds))
}

fn split_name(s: SplitChoice) -> &'static str {
    match s {
        SplitChoice::Train => "train",
        SplitChoice::Val => "val",
        SplitChoice::Test => "test",
        SplitChoice::All => "all",
    }
}

fn model_name(path: &Path, ckpt: &Checkpoint<f64>) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    format!("{stem}-w{}", ckpt.network.spec().width_multiplier)
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (ckpt, ds) = checkpoint_and_split(&a.checkpoint, &a.data, a.split)?;
    let cm = confusion(&ckpt.network, &ds)?;
    let folder = a.data.data.file_name().and_then(|s| s.to_str()).unwrap_or("data");
    let mut report = EvalReport::from_confusion(
        &model_name(&a.checkpoint, &ckpt),
        &ckpt.meta.method,
        &format!("{folder}/{}", split_name(a.split)),
        &cm,
        ckpt.network.num_parameters(),
        a.teacher_acc,
    )?;
    report.seed = Some(ckpt.meta.seed);
    report.model_size_mb = Some(model_size_mb(&a.checkpoint)?);
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("eval.json"), &json).with_context(|| format!("writing {}", out.display()))?;
        atms_kd::metrics::write_reports_csv(std::slice::from_ref(&report), &out.join("eval.csv"))?;
        fs::write(out.join("confusion.csv"), cm.to_csv(&ds.class_names))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchOutput {
    model: String,
    parameters: usize,
    model_size_mb: f64,
    input: Vec<usize>,
    #[serde(flatten)]
    timing: atms_kd::metrics::TimingStats,
}

fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?.resolve()?;
    let ckpt = load_checkpoint::<f32>(&a.checkpoint)?;
    let size = a.size.unwrap_or(ckpt.network.spec().input_size);
    let input = vec![1, 3, size, size];
    let (warmup, runs) = (a.warmup.unwrap_or(cfg.bench.warmup), a.runs.unwrap_or(cfg.bench.runs));
    if runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let timing = benchmark_inference(&ckpt.network, &input, warmup, runs)?;
    let stem = a.checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let out = BenchOutput {
        model: format!("{stem}-w{}", ckpt.network.spec().width_multiplier),
        parameters: ckpt.network.num_parameters(),
        model_size_mb: model_size_mb(&a.checkpoint)?,
        input,
        timing,
    };
    let json = serde_json::to_string_pretty(&out)?;
    println!("{json}");
    if let Some(path) = &a.out {
        write_file(path, json.as_bytes())?;
    }
    Ok(())
}

fn sensitivity_csv(table: &SensitivityTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tau", "entropy", "accuracy", "score", "tau_star"])?;
    for (i, r) in table.rows.iter().enumerate() {
        let mark = if i == table.best { "*" } else { "" };
        w.write_record([r.tau.to_string(), r.entropy.to_string(), r.accuracy.to_string(), r.score.to_string(), mark.into()])?;
    }
    Ok(w.into_inner()?)
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let grid = parse_grid(&a.grid)?;
    let (ckpt, ds) = checkpoint_and_split(&a.checkpoint, &a.data, a.split)?;
    let probe = match a.probe {
        ProbeChoice::Plain => Probe::Plain,
        ProbeChoice::Calibration => Probe::Calibration { lr: 1e-2, batch_size: 32, seed: ckpt.meta.seed },
    };
    let table = temperature_sensitivity(&ckpt.network, &ds, &grid, probe)?;
    let csv = sensitivity_csv(&table)?;
    print!("{}", String::from_utf8_lossy(&csv));
    log::info!("tau* = {} over {} temperatures", table.tau_star(), table.rows.len());
    if let Some(path) = &a.out {
        write_file(path, &csv)?;
    }
    Ok(())
}

fn report_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join("eval.json")
    } else {
        input.to_path_buf()
    }
}

fn compare(a: &CompareArgs) -> Result<()> {
    let mut reports = Vec::new();
    for input in &a.inputs {
        let path = report_path(input);
        if !path.exists() {
            return Err(KdError::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "no evaluation report; run `evaluate --out`")).into());
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let report: EvalReport =
            serde_json::from_str(&text).map_err(|e| KdError::format(&path, e))?;
        reports.push(report);
    }
    reports.sort_by(|x, y| y.accuracy.total_cmp(&x.accuracy).then_with(|| x.method.cmp(&y.method)));
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &reports {
        w.serialize(r)?;
    }
    let bytes = w.into_inner()?;
    print!("{}", String::from_utf8_lossy(&bytes));
    if let Some(path) = &a.out {
        write_file(path, &bytes)?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| KdError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| KdError::io(path, e))?;
    Ok(())
}
