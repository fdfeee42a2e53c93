//! `stcnet`: synthesize data, preprocess, train, evaluate, ablate,
//! gradient-check, explain and benchmark.
//!
//! Exit codes: 0 success, 1 invalid input (arguments, config, files), 2
//! failure while running a valid request.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] stcnet::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn file(path: &Path, source: std::io::Error) -> Self {
        CliError::File {
            path: path.display().to_string(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        let missing = |e: &std::io::Error| e.kind() == std::io::ErrorKind::NotFound;
        let validation = match self {
            CliError::Core(stcnet::Error::Io { source, .. }) => missing(source),
            CliError::Core(e) => e.is_validation(),
            CliError::Invalid { .. } => true,
            CliError::File { source, .. } => missing(source),
            CliError::Failed(_) => false,
        };
        if validation {
            1
        } else {
            2
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "stcnet", version, about = "Two-path spatio-temporal smoke detection on CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic clip set (smoke plumes vs steam, moving boxes, static scenes).
    Synth(SynthArgs),
    /// Sample segments and compute RGB and residual tensors for every clip.
    Preprocess(PreprocessArgs),
    /// Train one model from a run config.
    Train(TrainArgs),
    /// Score a checkpoint on a clip set.
    Eval(EvalArgs),
    /// Train every requested variant under every seed and tabulate F-scores.
    Ablate(AblateArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Grad-CAM heatmaps of one clip.
    Gradcam(GradcamArgs),
    /// Forward latency and throughput.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub clips: usize,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 56)]
    pub resolution: usize,
    /// Fraction of smoke clips.
    #[arg(long, default_value_t = 0.5)]
    pub class_mix: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub segments: usize,
    #[arg(long, default_value_t = 5.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 255.0)]
    pub beta: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for model.ckpt, train_log.csv and metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clip set to score instead of the config's test_data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Also write the metrics CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "full,a,b,c,spatial_only")]
    pub variants: Vec<String>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Skip the end-to-end network check.
    #[arg(long)]
    pub ops_only: bool,
}

#[derive(Args, Debug)]
pub struct GradcamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clip container holding the clip.
    #[arg(long)]
    pub data: PathBuf,
    /// Source id of the clip, or its index in the container.
    #[arg(long)]
    pub clip: String,
    #[arg(long, default_value = "temporal")]
    pub path: String,
    #[arg(long, default_value_t = 1)]
    pub class: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 255.0)]
    pub beta: f64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Take backbone and variant from a run config instead of the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `micro` or `full`.
    #[arg(long, default_value = "micro")]
    pub preset: String,
    #[arg(long, default_value = "full")]
    pub variant: String,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Clips per forward pass.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("STCNET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::invalid("STCNET_THREADS", format!("`{value}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Gradcam(a) => commands::gradcam(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
