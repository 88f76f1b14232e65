use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "pempc", version, about = "Explicit distributed MPC toolkit")]
pub struct Cli {
    /// TOML file with default values; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a benchmark problem file.
    Generate(GenerateArgs),
    /// Build and store the stage maps and the coupled factorization.
    Precompute(PrecomputeArgs),
    /// Estimate the certificate constants and write the report.
    Certify(CertifyArgs),
    /// Closed-loop simulation; writes trajectory.jsonl and trajectory.csv.
    Run(RunArgs),
    /// Closed-loop cost against exact MPC for several iteration counts.
    Compare(CompareArgs),
    /// Invariant suites on a small instance.
    Selftest,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "spring-damper")]
    pub benchmark: String,
    /// Number of subsystems.
    #[arg(long = "I")]
    pub i_bar: usize,
    /// Horizon length.
    #[arg(long = "N")]
    pub horizon: usize,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub d: Option<f64>,
    /// Replace the state and terminal sets by the maximal LQR-invariant set.
    #[arg(long)]
    pub invariant_set: bool,
    #[arg(short = 'o', long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Map store; defaults to `<problem>.store.json`.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrecomputeArgs {
    #[command(flatten)]
    pub files: ProblemArgs,
    /// Rebuild even when the stored maps match the problem.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub files: ProblemArgs,
    /// Iteration count to certify; defaults to the smallest certifying one.
    #[arg(long)]
    pub mbar: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub files: ProblemArgs,
    #[arg(long)]
    pub mbar: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Initial state as comma-separated values; sampled from the seed if absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Attach exact-MPC values to every step.
    #[arg(long)]
    pub oracle: bool,
    /// Certificate report; defaults to `<out-dir>/certificate.json` when present.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub files: ProblemArgs,
    #[arg(long, value_delimiter = ',')]
    pub mbars: Option<Vec<usize>>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub certificate: Option<PathBuf>,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub problem: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub certificate: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub mbar: Option<usize>,
    pub mbars: Option<Vec<usize>>,
    pub gamma: Option<f64>,
    pub steps: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub oracle: Option<bool>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage("io", format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage("config", format!("{}: {e}", path.display())))
    }
}

/// Problem and store paths after merging flags with the config file.
pub fn resolve_files(args: &ProblemArgs, file: &FileConfig) -> Result<(PathBuf, PathBuf), Failure> {
    let problem = args
        .problem
        .clone()
        .or_else(|| file.problem.clone())
        .ok_or_else(|| Failure::usage("usage", "--problem is required"))?;
    let store = args
        .store
        .clone()
        .or_else(|| file.store.clone())
        .unwrap_or_else(|| default_store_path(&problem));
    Ok((problem, store))
}

pub fn default_store_path(problem: &Path) -> PathBuf {
    let stem = problem.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    problem.with_file_name(format!("{stem}.store.json"))
}
