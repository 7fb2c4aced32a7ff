//! `atms-kd` command-line entry point.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "atms-kd", version, about = "Adaptive-temperature knowledge distillation on the CPU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic two-class image folder.
    GenData(GenDataArgs),
    /// Train the wide teacher network.
    TrainTeacher(TeacherArgs),
    /// Distill a student with the adaptive temperature schedule and mixed-sample augmentation.
    Distill(StudentArgs),
    /// Train a student on hard labels only.
    TrainDirect(StudentArgs),
    /// Distill a student at a constant temperature without augmentation.
    DistillFixed(FixedArgs),
    /// Score a checkpoint on one split of a dataset folder.
    Evaluate(EvaluateArgs),
    /// Measure single-image inference latency.
    Bench(BenchArgs),
    /// Tabulate entropy x accuracy over a temperature grid.
    AnalyzeTemperature(AnalyzeArgs),
    /// Join evaluation reports into one table sorted by accuracy.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

/// Settings shared by every training command. Flags override the config file.
#[derive(Args, Debug)]
pub struct RunArgs {
    /// Image folder with one sub-directory per class.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML (or .json) run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TeacherArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct StudentArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Teacher checkpoint (ignored by train-direct).
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Student width multiplier.
    #[arg(long)]
    pub width: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FixedArgs {
    #[command(flatten)]
    pub student: StudentArgs,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Config whose data section fixes image size and split.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Teacher accuracy in percent; adds knowledge retention to the report.
    #[arg(long)]
    pub teacher_acc: Option<f64>,
    /// Directory to receive eval.json, eval.csv and confusion.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Input side length; defaults to the size the checkpoint was built for.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProbeChoice {
    Plain,
    Calibration,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitChoice::Val)]
    pub split: SplitChoice,
    /// Temperature grid as min:max:step.
    #[arg(long, default_value = "1:8:0.5")]
    pub grid: String,
    #[arg(long, value_enum, default_value_t = ProbeChoice::Plain)]
    pub probe: ProbeChoice,
    /// CSV destination; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Run directories holding eval.json, or evaluation JSON files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// CSV destination; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
