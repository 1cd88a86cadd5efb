//! `alcs`: benchmark layers, build latency models, prune under a latency budget, run and
//! verify sparse models.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DECODE: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;
pub const EXIT_VERIFY: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "alcs", version, about = "SIMD-structured pruning under a latency budget")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Run manifest path (default: next to the primary output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic oriented-stripes dataset.
    MakeDataset(MakeDatasetArgs),
    /// Train a dense network and store it at full density.
    Train(TrainArgs),
    /// Measure the latency profile of one layer.
    BenchLayer(BenchLayerArgs),
    /// Measure every prunable layer of a model file.
    BuildLatencyModel(BuildLatencyModelArgs),
    /// Prune a dense model to a latency budget.
    Prune(PruneArgs),
    /// Run a sparse model on a dataset.
    Infer(InferArgs),
    /// Check a sparse model against the dense oracle.
    Verify(VerifyArgs),
    /// Convert a training log to CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    /// conv16-pool-conv32-pool-fc
    Toy,
    /// Same with 18 first-layer channels, so group size 4 leaves a tail group.
    ToyTail,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualInitArg {
    Residual,
    Zero,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    All,
    Train,
    Validation,
}

#[derive(Debug, Args, Serialize)]
pub struct MakeDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 1200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ArchKind::Toy)]
    pub arch: ArchKind,
    #[arg(long, default_value_t = 12)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub group_size: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct MeasureArgs {
    /// Timed runs per knot.
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    /// Untimed runs before each knot.
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 4)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Densities to measure; must include 0 and 1.
    #[arg(long, value_delimiter = ',', default_values_t = alcs::latency::default_densities())]
    pub densities: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchLayerArgs {
    /// `o_c,i_c,k_h,k_w,i_h,i_w,stride,pad`
    #[arg(long, value_parser = parse_shape)]
    pub shape: [usize; 8],
    #[arg(long, default_value = "layer")]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub measure: MeasureArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildLatencyModelArgs {
    /// Model file describing the network (density is ignored).
    #[arg(long)]
    pub model: PathBuf,
    /// Input `channels,height,width`.
    #[arg(long, value_parser = parse_dims, default_value = "1,16,16")]
    pub input: (usize, usize, usize),
    #[arg(long)]
    pub out: PathBuf,
    /// Constant latency of the layers that are not profiled.
    #[arg(long, default_value_t = 0.0)]
    pub tau_ms: f64,
    #[command(flatten)]
    pub measure: MeasureArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct PruneArgs {
    /// Dense model to prune.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Latency model of the same network.
    #[arg(long)]
    pub latency: PathBuf,
    #[arg(long)]
    pub budget_ms: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log (default: `<out>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub rho: f64,
    #[arg(long, default_value_t = 4)]
    pub group_size: usize,
    #[arg(long, default_value_t = 30)]
    pub admm_epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub ft_epochs: usize,
    /// Bisection tolerance (default: the smaller of 0.1 ms and budget / 1000).
    #[arg(long)]
    pub eps_ms: Option<f64>,
    #[arg(long, default_value_t = 0.001)]
    pub admm_lr: f64,
    #[arg(long, default_value_t = 0.001)]
    pub ft_lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = DualInitArg::Residual)]
    pub dual_init: DualInitArg,
    /// Prunable layer indices left dense.
    #[arg(long, value_delimiter = ',')]
    pub skip_layers: Vec<usize>,
    /// Workers for batch gradients; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Validation)]
    pub split: Split,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Per-sample predictions as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_parser = parse_dims, default_value = "1,16,16")]
    pub input: (usize, usize, usize),
    /// Random whole-network inputs.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    /// Also time scalar against vectorized on the 64x32x3x3 reference layer.
    #[arg(long)]
    pub speedup: bool,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report as JSON (also printed to stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Line-delimited training log.
    #[arg(long)]
    pub log: PathBuf,
    /// CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_list<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let values: Vec<usize> =
        s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}"))).collect::<Result<_, _>>()?;
    values.try_into().map_err(|v: Vec<usize>| format!("expected {N} comma-separated integers, got {}", v.len()))
}

fn parse_shape(s: &str) -> Result<[usize; 8], String> {
    parse_list::<8>(s)
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), String> {
    let [c, h, w] = parse_list::<3>(s)?;
    Ok((c, h, w))
}

/// A flag combination rejected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A model that failed `verify`.
#[derive(Debug)]
pub struct VerificationFailed(pub String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<alcs::Error>() {
            match e {
                alcs::Error::Infeasible { .. } => return EXIT_INFEASIBLE,
                alcs::Error::Decode(_) => return EXIT_DECODE,
                _ => {}
            }
        }
        if cause.is::<alcs::DecodeError>() || cause.is::<serde_json::Error>() {
            return EXIT_DECODE;
        }
        if cause.is::<VerificationFailed>() {
            return EXIT_VERIFY;
        }
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
    }
    EXIT_OTHER
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command, cli.manifest) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let infeasible = anyhow::Error::new(alcs::Error::Infeasible { budget_ms: 0.0, floor_ms: 1.0 });
        let decode = anyhow::Error::new(alcs::Error::Decode(alcs::DecodeError::Trailing(1))).context("loading");
        let verify = anyhow::Error::new(VerificationFailed("x".into()));
        let usage = anyhow::Error::new(UsageError("x".into()));
        let other = anyhow::anyhow!("disk on fire");
        let codes: Vec<u8> = [infeasible, decode, verify, usage, other].iter().map(exit_code).collect();
        assert_eq!(codes, vec![EXIT_INFEASIBLE, EXIT_DECODE, EXIT_VERIFY, EXIT_USAGE, EXIT_OTHER]);
    }

    #[test]
    fn list_parsers() {
        assert_eq!(parse_dims("1, 16,16"), Ok((1, 16, 16)));
        assert!(parse_dims("1,16").is_err());
        assert!(parse_shape("1,2,3,4,5,6,7,x").is_err());
    }
}
