//! Command-line front end: dataset generation, degradation, training,
//! adaptation, evaluation and full experiment plans.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hypertta::cela::ResetMode;
use hypertta::Error;

/// Caps the size of the worker pool.
const THREADS_VAR: &str = "HYPERTTA_THREADS";

#[derive(Parser)]
#[command(
    name = "hypertta",
    version,
    about = "Hyperspectral degradation, classification and test-time adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled scene and its train/target split.
    Gen(GenArgs),
    /// Apply one seeded degradation to a cube, or replay a recorded one.
    Degrade(DegradeArgs),
    /// Train a classifier on the training side of a dataset.
    Train(TrainArgs),
    /// Adapt a trained model on the target side and write predictions.
    Adapt(AdaptArgs),
    /// Score predictions against the labels of the target side.
    Eval(EvalArgs),
    /// Re-render the CSV and Markdown tables of a finished run.
    Report(ReportArgs),
    /// Execute a full experiment plan.
    Run(RunArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON scene description; omitted fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the scene seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.2)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum DegradationType {
    Jpeg,
    ZeroMeanGaussian,
    AdditiveGaussian,
    Poisson,
    SaltPepper,
    Stripe,
    Deadline,
    MeanBlur,
    Fog,
}

#[derive(Args)]
struct DegradeArgs {
    /// Clean input cube (`.hsi` with its JSON header alongside).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output cube; the record goes to `<out>.degradation.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "type", value_enum, required_unless_present = "replay")]
    kind: Option<DegradationType>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JPEG quality.
    #[arg(long)]
    q: Option<u32>,
    /// Zero-mean Gaussian standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Upper bound of the per-band additive Gaussian deviation.
    #[arg(long)]
    sigma_max: Option<f64>,
    /// Poisson target signal-to-noise ratio.
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    /// Poisson divisor guard.
    #[arg(long, default_value_t = 1e-6)]
    eps_div: f64,
    /// Salt-and-pepper corruption probability.
    #[arg(long)]
    p: Option<f64>,
    /// Lower bound (inclusive) of the stripe or deadline count.
    #[arg(long)]
    a: Option<usize>,
    /// Upper bound (exclusive) of the stripe or deadline count.
    #[arg(long)]
    b: Option<usize>,
    /// Mean blur kernel side.
    #[arg(long)]
    k: Option<usize>,
    /// Fog density scale.
    #[arg(long)]
    omega: Option<f64>,
    /// Rebuild the cube from a recorded degradation instead.
    #[arg(long, conflicts_with = "kind")]
    replay: Option<PathBuf>,
    /// Also write a false-color PPM of bands `r,g,b` next to the output.
    #[arg(long, value_delimiter = ',')]
    preview: Option<Vec<usize>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (cube, labels and split).
    #[arg(long)]
    data: PathBuf,
    /// JSON model configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path; the manifest goes to the `.json` sibling.
    #[arg(long)]
    out: PathBuf,
    /// Optional training report (per-epoch loss and accuracy).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ResetArg {
    PerBatch,
    PerRun,
}

impl From<ResetArg> for ResetMode {
    fn from(r: ResetArg) -> Self {
        match r {
            ResetArg::PerBatch => ResetMode::PerBatch,
            ResetArg::PerRun => ResetMode::PerRun,
        }
    }
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory; its split chooses the target pixels.
    #[arg(long)]
    data: PathBuf,
    /// Cube to adapt on instead of the dataset's own, usually a degraded copy.
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    #[arg(long, default_value_t = 0.3)]
    top: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, value_enum, default_value_t = ResetArg::PerRun)]
    reset: ResetArg,
    /// Seeds the order of the target stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Predictions in stream order, little-endian u16.
    #[arg(long)]
    out: PathBuf,
    /// Adaptation report, including the stream order.
    #[arg(long)]
    report: PathBuf,
    /// Also write the unadapted model's predictions for the same stream.
    #[arg(long)]
    unadapted: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    preds: PathBuf,
    /// Adaptation report giving the pixel order of `preds`. Without it the
    /// predictions follow the target side in ascending pixel order.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the evaluation JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding `report.json`.
    #[arg(long)]
    run: PathBuf,
    /// Directory for the rendered tables (defaults to the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Overrides the plan's repeat count.
    #[arg(long)]
    repeats: Option<usize>,
    /// Overrides the plan's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> hypertta::Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Config(format!("{THREADS_VAR}={raw:?} is not a positive integer"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Degrade(a) => commands::degrade(a),
        Command::Train(a) => commands::train(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::Run(a) => commands::run(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
