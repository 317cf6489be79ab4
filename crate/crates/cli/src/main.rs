use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "saasbo", version, about = "Bayesian optimization with sparse axis-aligned subspace priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run SAASBO replications and write records plus a summary table.
    Run(RunArgs),
    /// Evaluate scrambled Sobol points as a random-search baseline.
    SobolBaseline(BaselineArgs),
    /// Compare MLE, weak-prior and SAAS fits on held-out data.
    FitDiagnose(DiagnoseArgs),
    /// Time each iteration of one run and print a runtime table.
    BenchTable(BenchArgs),
}

#[derive(Args, Clone)]
pub struct ProblemArgs {
    /// branin, hartmann6, rosenbrock (optionally suffixed with D, e.g.
    /// branin100) or rotated-hartmann.
    #[arg(long)]
    pub problem: String,
    /// Ambient dimension; defaults to the name suffix, else 100.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Projection width of rotated-hartmann.
    #[arg(long)]
    pub dp: Option<usize>,
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    /// Scale of the half-Cauchy prior on the global shrinkage.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = InferenceArg::Nuts)]
    pub inference: InferenceArg,
    #[arg(long, value_enum, default_value_t = KernelArg::Rbf)]
    pub kernel: KernelArg,
    #[arg(long = "nuts-budget", value_enum, default_value_t = NutsBudget::Default)]
    pub nuts_budget: NutsBudget,
    /// Infer the observation noise instead of fixing it.
    #[arg(long)]
    pub noisy: bool,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Total number of evaluations.
    #[arg(long, default_value_t = 50)]
    pub budget: usize,
    /// Size of the Sobol initial design; defaults per problem.
    #[arg(long)]
    pub init: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Concurrent replications.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Directory name under --out; derived from the problem and seed if absent.
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 50)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    /// Training rows `x_1 … x_D y`, whitespace or comma separated.
    #[arg(long, requires = "test")]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    pub test: Option<PathBuf>,
    /// Dimension of the synthetic problem used when no files are given.
    #[arg(long, default_value_t = 30)]
    pub synthetic_dim: usize,
    /// The one coordinate the synthetic target depends on.
    #[arg(long, default_value_t = 0)]
    pub active: usize,
    #[arg(long, default_value_t = 50)]
    pub n_train: usize,
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = KernelArg::Rbf)]
    pub kernel: KernelArg,
    #[arg(long = "nuts-budget", value_enum, default_value_t = NutsBudget::Default)]
    pub nuts_budget: NutsBudget,
    /// Write the full JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 30)]
    pub budget: usize,
    #[arg(long)]
    pub init: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where rotated-hartmann spec files live.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferenceArg {
    Nuts,
    Map,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Rbf,
    Matern52,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NutsBudget {
    /// 512 warmup, 256 draws, thinning 16.
    Default,
    /// 128 warmup, 128 draws, thinning 8.
    Reduced,
}

/// Failures sorted by exit status.
pub enum Failure {
    /// Bad flags or configuration: exit 2.
    Usage(String),
    /// Anything that went wrong while running: exit 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<saasbo::error::Error> for Failure {
    fn from(e: saasbo::error::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn read_table(path: &Path) -> anyhow::Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut vals = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: not a number", path.display(), i + 1))?;
        let last = vals
            .pop()
            .with_context(|| format!("{}:{}: empty row", path.display(), i + 1))?;
        rows.push(vals);
        y.push(last);
    }
    Ok((rows, y))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::SobolBaseline(a) => commands::sobol_baseline(a),
        Command::FitDiagnose(a) => commands::fit_diagnose(a),
        Command::BenchTable(a) => commands::bench_table(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
