mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svdd::{BandwidthMethod, DeltaMode, ErrorKind, SvddError};

#[derive(Parser, Debug)]
#[command(name = "svdd", version, about = "Support vector data description: bandwidth selection, training, scoring and experiments")]
struct Cli {
    /// Flat `key = value` file; keys are the long flag names.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for every random choice (the train/test splits).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Saturation correction and max-normalization of a labeled CSV.
    Prep(PrepArgs),
    /// Select a Gaussian bandwidth for a table or one of its classes.
    Bandwidth(BandwidthArgs),
    /// Train one SVDD per class and save the model as JSON.
    Train(TrainArgs),
    /// Label rows with a saved model.
    Score(ScoreArgs),
    /// Repeated train/test protocol over several bandwidth methods.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct PrepArgs {
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    /// Values strictly above this become 0.
    #[arg(long)]
    saturation_threshold: Option<f64>,
    /// Divide by the global maximum.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args, Debug, Default)]
struct SolverArgs {
    /// Expected fraction of training outliers; C = 1/(n f). Default 1/n.
    #[arg(long)]
    outlier_fraction: Option<f64>,
    #[arg(long)]
    kkt_tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    alpha_zero_tolerance: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct CriterionArgs {
    /// Tolerance for the mean criterion.
    #[arg(long)]
    delta: Option<f64>,
    /// How the modified mean computes its tolerance.
    #[arg(long)]
    delta_mode: Option<DeltaMode>,
    /// Points in the default peak sweep.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Moving-average window for the peak sweep (odd).
    #[arg(long)]
    smoothing_window: Option<usize>,
    /// Bandwidth used for classes too small for the criterion.
    #[arg(long)]
    fallback_bandwidth: Option<f64>,
}

#[derive(Args, Debug)]
struct BandwidthArgs {
    input: Option<PathBuf>,
    #[arg(long)]
    method: Option<BandwidthMethod>,
    /// Use only the rows of this class.
    #[arg(long = "class")]
    class: Option<String>,
    /// Where the peak sweep CSV goes (default: output dir).
    #[arg(long)]
    sweep_out: Option<PathBuf>,
    #[arg(long, env = "SVDD_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    criterion: CriterionArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    input: Option<PathBuf>,
    #[arg(long)]
    method: Option<BandwidthMethod>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    criterion: CriterionArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    input: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Predictions CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Labeled CSV of the scene.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated: var, mean, peak, modified_mean.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<BandwidthMethod>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    saturation_threshold: Option<f64>,
    /// Skip max-normalization.
    #[arg(long)]
    no_normalize: bool,
    #[arg(long, env = "SVDD_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    criterion: CriterionArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

fn exit_code(e: &SvddError) -> u8 {
    match e.kind() {
        ErrorKind::Input => 1,
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Convergence => 4,
        ErrorKind::Degenerate => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        // output piped into something like `head` that stopped reading
        Err(SvddError::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
