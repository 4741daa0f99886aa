//! `sepdetect`: train a separation-regularized classifier, craft FGSM
//! adversarial examples against it, and flag them by feature-space density.
//!
//! Exit codes: 0 on success, 1 on validation errors, 2 on I/O errors.

mod commands;
mod manifest;
mod repro;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use sepdetect::data::ScenarioKind;

#[derive(Parser)]
#[command(
    name = "sepdetect",
    version,
    about = "Density-based adversarial example detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario dataset as CSV (or JSONL by extension).
    GenData(GenDataArgs),
    /// Train a classifier on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Craft FGSM adversarial examples against a checkpoint.
    Attack(AttackArgs),
    /// Fit per-class feature densities from a checkpoint and training data.
    FitDetector(FitDetectorArgs),
    /// Calibrate flagging thresholds on clean validation data.
    Calibrate(CalibrateArgs),
    /// Flag inputs as adversarial with a calibrated detector.
    Detect(DetectArgs),
    /// Evaluate detection quality and write a report JSON.
    Eval(EvalArgs),
    /// One-shot pipeline for a scenario over a list of seeds.
    Repro(repro::ReproArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Scenario geometry: separated, near-boundary, or pocket.
    #[arg(long)]
    kind: ScenarioKind,
    #[arg(long = "per-class", default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    std: f64,
    #[arg(long, default_value_t = 5.0)]
    gap: f64,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long = "pocket-size", default_value_t = 10)]
    pocket_size: usize,
    #[arg(long = "pocket-offset", default_value_t = 0.0)]
    pocket_offset: f64,
    #[arg(long, env = "SEPDETECT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Optional JSON config file: any subset of the train fields; explicit flags
/// win over the file, the file wins over built-in defaults.
#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Class count; inferred from labels when omitted.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "clip")]
    grad_clip_norm: Option<f64>,
    /// Hidden layer widths, comma separated (for example "64,32").
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long, env = "SEPDETECT_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Optional path for the per-epoch training history JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epsilon: f64,
    /// Componentwise clamp box "lo,hi".
    #[arg(long)]
    clamp: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitDetectorArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "train-data")]
    train_data: PathBuf,
    /// Kernel bandwidth; the median heuristic is used when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    detector: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    #[arg(long = "target-fpr", default_value_t = 0.05)]
    target_fpr: f64,
    /// Calibrate one pooled threshold instead of per-class thresholds.
    #[arg(long = "global-threshold", default_value_t = false)]
    global_threshold: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    detector: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    detector: PathBuf,
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    adv: Option<PathBuf>,
    /// Scenario name recorded in the report.
    #[arg(long, default_value = "ingested")]
    scenario: String,
    /// Attack epsilon recorded in the report; read from the adversarial
    /// set's sidecar manifest when omitted.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Attack(args) => commands::attack(args),
        Command::FitDetector(args) => commands::fit_detector(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Detect(args) => commands::detect(args),
        Command::Eval(args) => commands::eval(args),
        Command::Repro(args) => repro::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
