//! `deferral`: every pipeline stage as one subcommand.

mod commands;
mod invocation;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use deferral_core::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "deferral", version, about = "Bounded YES/NO/TBD decision toolkit")]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, env = "DEFERRAL_SEED", default_value_t = 42)]
    pub seed: u64,

    /// Ignore unknown prediction keys and skip records that fail routing.
    #[arg(long, global = true, env = "DEFERRAL_LENIENT")]
    pub lenient: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic premise/hypothesis dataset.
    GenData(GenDataArgs),
    /// Train the hashed n-gram logistic regression model.
    TrainToy(TrainToyArgs),
    /// Write predictions of a trained toy model.
    Predict(PredictArgs),
    /// Route predictions under a policy and append audit records.
    Route(RouteArgs),
    /// Classification metrics, optionally under a routing policy.
    Evaluate(EvaluateArgs),
    /// Reliability bins, ECE and high-confidence error rates.
    Calibrate(CalibrateArgs),
    /// Binary collapse and confidence/entropy/margin coverage curves.
    Abstain(AbstainArgs),
    /// Metrics across a threshold grid.
    Sweep(SweepArgs),
    /// Expected risk of a policy, or the lowest-risk point of a grid.
    Risk(RiskArgs),
    /// Metric deltas between two run summaries.
    Compare(CompareArgs),
    /// Re-route an audit log against a policy registry.
    Replay(ReplayArgs),
    /// Macro F1 of the evaluation pipeline under several seeds.
    Stability(StabilityArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::TrainToy(_) => "train-toy",
            Command::Predict(_) => "predict",
            Command::Route(_) => "route",
            Command::Evaluate(_) => "evaluate",
            Command::Calibrate(_) => "calibrate",
            Command::Abstain(_) => "abstain",
            Command::Sweep(_) => "sweep",
            Command::Risk(_) => "risk",
            Command::Compare(_) => "compare",
            Command::Replay(_) => "replay",
            Command::Stability(_) => "stability",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Total examples, spread evenly over categories.
    #[arg(long, default_value_t = 2000, conflicts_with = "config")]
    pub n: usize,
    /// JSON `{"counts": {"CATEGORY": n, ...}}` instead of `--n`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of golds replaced by another label; overrides the config.
    #[arg(long)]
    pub label_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub smoothing: f64,
    #[arg(long, default_value_t = 1 << 14)]
    pub feature_dim: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, env = "DEFERRAL_MODEL_ID")]
    pub model_id: String,
    #[arg(long, env = "DEFERRAL_MODEL_VERSION")]
    pub model_version: String,
    /// Audit store; records are appended.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write routed decisions as JSONL (overwritten).
    #[arg(long)]
    pub decisions_out: Option<PathBuf>,
    /// Stamp every record with this RFC 3339 time instead of the clock.
    #[arg(long, env = "DEFERRAL_FIXED_TIME")]
    pub fixed_time: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Also report routed metrics and error categories under this policy.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Evaluation report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run summary for `compare`.
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    pub run_id: String,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, env = "DEFERRAL_MODEL_ID", default_value = "unknown")]
    pub model_id: String,
    #[arg(long, env = "DEFERRAL_MODEL_VERSION", default_value = "unknown")]
    pub model_version: String,
    #[arg(long, env = "DEFERRAL_BINS", default_value_t = 15)]
    pub bins: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.85,0.9")]
    pub high_conf: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ErrorBase {
    HighConfidence,
    All,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "DEFERRAL_BINS", default_value_t = 15)]
    pub bins: usize,
    /// Reliability bins as CSV.
    #[arg(long)]
    pub bins_csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.85,0.9")]
    pub high_conf: Vec<f64>,
    #[arg(long, value_enum, default_value = "high-confidence")]
    pub error_base: ErrorBase,
}

#[derive(Debug, Args)]
pub struct AbstainArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.9,0.8,0.7,0.6,0.5")]
    pub coverages: Vec<f64>,
    /// Coverage table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Threshold grid JSON; defaults to a joint 0.34..0.94 grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// 3x3 cost matrix JSON, rows true label, columns routed label.
    #[arg(long)]
    pub cost: Option<PathBuf>,
    /// Sweep table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Score this policy; without it the grid is searched.
    #[arg(long, conflicts_with = "grid")]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Write the selected operating point as a policy document.
    #[arg(long, conflicts_with = "policy")]
    pub policy_out: Option<PathBuf>,
    #[arg(long, default_value = "selected")]
    pub policy_id: String,
    #[arg(long, default_value = "1")]
    pub policy_version: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub audit: PathBuf,
    /// Directory of policy JSON documents.
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "42,0,7")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    /// The command ran but its check failed (e.g. replay mismatches).
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match commands::run(&cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_VALIDATION })
        }
        Err(Failure::Check(message)) => {
            eprintln!("check failed: {message}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
