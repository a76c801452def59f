//! `certlab` command-line front end.
//!
//! Every command writes machine-readable files into `--out` and a short
//! human-readable summary to standard output. Exit codes: 0 on success, 1
//! when a check fails or a computation breaks, 2 on usage errors (unknown
//! flag, missing file, invalid config or argument).

mod commands;
mod dataset;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use certlab::RelaxationKind;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::dataset::DatasetArgs;

#[derive(Debug, Parser)]
#[command(name = "certlab", version, about = "Certified-robustness lab for feedforward ReLU networks")]
struct Cli {
    /// Directory holding the MNIST IDX files.
    #[arg(long, global = true, env = "CERTLAB_DATA", default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Seed for data sampling, initialization and training (overrides the
    /// config's seed when given).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-example work (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network and save it with its history.
    Train(TrainArgs),
    /// Accuracy, PGD robustness and certified robustness at one radius.
    Certify(CertifyArgs),
    /// Certified-robustness curve and its area.
    Curve(CurveArgs),
    /// Certified robustness of several networks under several relaxations.
    Cross(CrossArgs),
    /// Output lower bounds along a first-layer weight direction.
    Sweep(SweepArgs),
    /// Gradient ascent on random one-dimensional landscape instances.
    Landscape(LandscapeArgs),
    /// Reproduce the two minimal discontinuity examples.
    MinimalExamples(OutArgs),
    /// LP encodings against closed forms and Triangle dominance.
    LpCheck(LpCheckArgs),
    /// Write the named training presets as config files.
    FetchPresets(OutArgs),
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Named preset (see `fetch-presets`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides as `key=value`, applied after the preset or file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Hidden-layer widths.
    #[arg(long, value_delimiter = ',', default_value = "20,20")]
    hidden: Vec<usize>,
}

#[derive(Debug, Args)]
struct CertifyOpts {
    /// Bound `u_{y'} − l_y` separately instead of on the elided network.
    #[arg(long)]
    no_elision: bool,
    /// Do not clip perturbation boxes to [0, 1].
    #[arg(long)]
    no_clip: bool,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    /// Saved network.
    #[arg(long)]
    net: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Perturbation radius.
    #[arg(long)]
    eps: f64,
    /// Relaxations to certify with.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "box,hbox,deepz,crown,crown-ibp-r")]
    kinds: Vec<RelaxationKind>,
    #[command(flatten)]
    certify: CertifyOpts,
    /// PGD steps.
    #[arg(long, default_value_t = 100)]
    pgd_steps: usize,
    /// PGD step size.
    #[arg(long, default_value_t = 0.01)]
    pgd_step_size: f64,
    /// PGD random restarts.
    #[arg(long, default_value_t = 0)]
    pgd_restarts: usize,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[arg(long)]
    net: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long, value_parser = parse_kind, default_value = "box")]
    kind: RelaxationKind,
    /// Largest radius of the grid.
    #[arg(long)]
    eps_max: f64,
    /// Number of evenly spaced radii, starting at 0.
    #[arg(long, default_value_t = 21)]
    samples: usize,
    #[command(flatten)]
    certify: CertifyOpts,
}

#[derive(Debug, Args)]
struct CrossArgs {
    /// Networks as `label=path`.
    #[arg(long = "net", value_name = "LABEL=PATH", required = true)]
    nets: Vec<String>,
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long)]
    eps: f64,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "box,hbox,deepz,crown,crown-ibp-r")]
    kinds: Vec<RelaxationKind>,
    #[command(flatten)]
    certify: CertifyOpts,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    net: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Index of the example whose ε-box is bounded.
    #[arg(long, default_value_t = 0)]
    example: usize,
    #[arg(long)]
    eps: f64,
    /// Output neuron whose lower bound is swept (default: the label).
    #[arg(long)]
    target: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "box,hbox,deepz,crown,crown-ibp-r")]
    kinds: Vec<RelaxationKind>,
    /// Relaxation whose gradient defines the direction (default: the first kind).
    #[arg(long, value_parser = parse_kind)]
    direction_kind: Option<RelaxationKind>,
    #[arg(long, default_value_t = 1.0)]
    delta_max: f64,
    #[arg(long, default_value_t = 201)]
    points: usize,
    #[arg(long)]
    no_clip: bool,
}

#[derive(Debug, Args)]
struct LandscapeArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Number of random instances; instance `k` is sampled with seed `seed + k`.
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "box,deepz,crown,triangle")]
    kinds: Vec<RelaxationKind>,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.95)]
    lr_decay: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    target: usize,
}

#[derive(Debug, Args)]
struct LpCheckArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Number of random small networks.
    #[arg(long, default_value_t = 100)]
    cases: usize,
}

fn parse_kind(s: &str) -> Result<RelaxationKind, String> {
    s.parse().map_err(|e: certlab::Error| e.to_string())
}

/// Failure of a command.
#[derive(Debug, Error)]
pub enum CliError {
    /// Library failure.
    #[error(transparent)]
    Lab(#[from] certlab::Error),
    /// File that could not be read or written.
    #[error("{}: {source}", path.display())]
    File {
        /// Path involved.
        path: PathBuf,
        /// Underlying failure.
        source: std::io::Error,
    },
    /// Invalid arguments.
    #[error("{0}")]
    Usage(String),
    /// A check reported failure.
    #[error("check failed: {0}")]
    CheckFailed(String),
    /// JSON serialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use certlab::Error as E;
        match self {
            Self::Usage(_) | Self::File { .. } => 2,
            Self::Lab(E::Io(_) | E::Parse { .. } | E::Config(_) | E::Invalid(_) | E::Network(_)) => 2,
            _ => 1,
        }
    }
}

/// Result of a command.
pub type CliResult<T> = Result<T, CliError>;

/// Writes `contents` to `dir/name`.
pub fn write_output(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| CliError::File { path, source })
}

fn run(cli: Cli) -> CliResult<()> {
    certlab::parallel::set_threads(cli.threads);
    let ctx = commands::Context {
        data_dir: cli.data_dir,
        seed: cli.seed,
    };
    match cli.command {
        Command::Train(a) => commands::train(&ctx, a),
        Command::Certify(a) => commands::certify(&ctx, a),
        Command::Curve(a) => commands::curve(&ctx, a),
        Command::Cross(a) => commands::cross(&ctx, a),
        Command::Sweep(a) => commands::sweep(&ctx, a),
        Command::Landscape(a) => commands::landscape(&ctx, a),
        Command::MinimalExamples(a) => commands::minimal_examples(a),
        Command::LpCheck(a) => commands::lp_check(&ctx, a),
        Command::FetchPresets(a) => commands::fetch_presets(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
