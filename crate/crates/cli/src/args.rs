//! Command-line surface and `--config` file expansion.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use npcc::detector::{DetectorConfig, TauMode, WarmupPolicy};
use npcc::ingest::DEFAULT_BIN_SECONDS;
use npcc::metrics::{DmaxVariant, MetricsConfig, MetricsMode};
use npcc::simulate::AttackStrategy;

use crate::failure::{Failure, Kind, Outcome};

#[derive(Debug, Parser)]
#[command(
    name = "npcc",
    version,
    about = "Topology anomaly detection from traceroute snapshots"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Flat key=value file of defaults; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Bin a path file into per-bin edge lists.
    Ingest(IngestArgs),
    /// Compute NPCC metrics for edge-list snapshots.
    Metrics(MetricsArgs),
    /// Classify a metrics table with the sliding normal domain.
    Detect(DetectArgs),
    /// Synthetic attack trajectories and labelled streams.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Score detector verdicts against labels.
    Evaluate(EvaluateArgs),
    /// Score the detector over a grid of window sizes.
    Sweep(SweepArgs),
    /// ROC curve over a grid of lambda values.
    Roc(RocArgs),
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum SimulateCommand {
    /// Remove nodes step by step and trace the metrics.
    Attack(AttackArgs),
    /// Labelled stream of rewired snapshots with hub-removal anomalies.
    Stream(StreamArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Metrics(_) => "metrics",
            Command::Detect(_) => "detect",
            Command::Simulate(SimulateCommand::Attack(_)) => "simulate attack",
            Command::Simulate(SimulateCommand::Stream(_)) => "simulate stream",
            Command::Evaluate(_) => "evaluate",
            Command::Sweep(_) => "sweep",
            Command::Roc(_) => "roc",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauModeArg {
    Deviation,
    Literal,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmupArg {
    AssumeNormal,
    PartialWindow,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DmaxArg {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    /// Highest current degree, recomputed after every step.
    Targeted,
    /// Highest degree in the intact graph.
    TargetedStatic,
    Random,
}

impl From<StrategyArg> for AttackStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Targeted => AttackStrategy::TargetedAdaptive,
            StrategyArg::TargetedStatic => AttackStrategy::TargetedStatic,
            StrategyArg::Random => AttackStrategy::Random,
        }
    }
}

/// Detector settings shared by every command that runs the detector; the
/// window size is declared by each command since `sweep` varies it.
#[derive(Debug, Args, Serialize)]
pub struct DetectorArgs {
    #[arg(long, default_value_t = 1.96, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = TauModeArg::Deviation)]
    pub tau_mode: TauModeArg,
    #[arg(long, value_enum, default_value_t = WarmupArg::AssumeNormal)]
    pub warmup: WarmupArg,
}

impl DetectorArgs {
    pub fn config(&self, k: usize) -> DetectorConfig {
        DetectorConfig {
            k,
            lambda: self.lambda,
            tau_mode: match self.tau_mode {
                TauModeArg::Deviation => TauMode::Deviation,
                TauModeArg::Literal => TauMode::Literal,
            },
            warmup: match self.warmup {
                WarmupArg::AssumeNormal => WarmupPolicy::AssumeNormal,
                WarmupArg::PartialWindow => WarmupPolicy::PartialWindow,
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsModeArgs {
    /// All-pairs BFS over the giant component (the default).
    #[arg(long, conflicts_with = "sample")]
    pub exact: bool,
    /// Estimate from this many BFS sources.
    #[arg(long, value_name = "N")]
    pub sample: Option<usize>,
    #[arg(long, value_enum, default_value_t = DmaxArg::Max)]
    pub dmax_variant: DmaxArg,
}

impl MetricsModeArgs {
    /// Sampling draws its sources from `seed`.
    pub fn config(&self, seed: u64) -> MetricsConfig {
        MetricsConfig {
            variant: match self.dmax_variant {
                DmaxArg::Max => DmaxVariant::Max,
                DmaxArg::Mean => DmaxVariant::Mean,
            },
            mode: match self.sample {
                Some(sample_size) => MetricsMode::Sampled { sample_size, seed },
                None => MetricsMode::Exact,
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Path file: `timestamp|hop|hop...` per line, `*` for an unresolved hop.
    #[arg(long)]
    pub input: PathBuf,
    /// Receives `bin_<id>.edges` files and `index.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BIN_SECONDS)]
    pub bin_seconds: u64,
    /// Timestamp at which bin 0 starts.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub origin: i64,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    /// Edge lists; `bin_<id>.edges` names set the bin id, otherwise the
    /// position on the command line does.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub mode: MetricsModeArgs,
    /// Seed for source sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    /// Metrics table.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 36)]
    pub k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub detector: DetectorArgs,
    /// Continue from a saved detector state with the same configuration.
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    /// Write the detector state after the last tick.
    #[arg(long, value_name = "FILE")]
    pub save_state: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AttackArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Targeted)]
    pub strategy: StrategyArg,
    /// Fraction of the original nodes removed per step.
    #[arg(long, default_value_t = 0.005)]
    pub step: f64,
    /// Total fraction removed by the end.
    #[arg(long, default_value_t = 0.15)]
    pub max: f64,
    /// Seeds the generated graph, random removal and source sampling.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub mode: MetricsModeArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct StreamArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Seed of the base graph.
    #[arg(long, default_value_t = 1)]
    pub graph_seed: u64,
    #[arg(long, default_value_t = 720)]
    pub ticks: usize,
    /// Anomaly windows as `start:end:fraction`, comma separated; `end` is
    /// exclusive.
    #[arg(long, default_value = "360:396:0.06")]
    pub windows: String,
    /// Seed of the per-tick rewiring and source sampling.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Metrics table.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth labels table.
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub mode: MetricsModeArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 36)]
    pub k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub detector: DetectorArgs,
    /// Weight of recall in the F-score.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Window sizes, comma separated.
    #[arg(long, default_value = "12,24,36,48,60")]
    pub k_grid: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub detector: DetectorArgs,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RocArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 36)]
    pub k: usize,
    /// Strictly ascending lambda values, comma separated.
    #[arg(long, default_value = "0.25,0.5,1,1.5,1.96,2.5,3,4,6")]
    pub lambda_grid: String,
    #[arg(long, value_enum, default_value_t = TauModeArg::Deviation)]
    pub tau_mode: TauModeArg,
    #[arg(long, value_enum, default_value_t = WarmupArg::AssumeNormal)]
    pub warmup: WarmupArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RocArgs {
    pub fn base(&self) -> DetectorConfig {
        DetectorArgs {
            lambda: 1.0,
            tau_mode: self.tau_mode,
            warmup: self.warmup,
        }
        .config(self.k)
    }
}

const COMMAND_WORDS: &[&str] = &[
    "ingest", "metrics", "detect", "simulate", "attack", "stream", "evaluate", "sweep", "roc",
];

/// Splices the options of a `--config` file into `argv` right after the
/// subcommand, so that any flag given on the command line comes later and
/// overrides it.
pub fn expand_config(argv: Vec<String>) -> Outcome<Vec<String>> {
    let mut path = None;
    let mut i = 1;
    while i < argv.len() {
        if argv[i] == "--config" {
            path = argv.get(i + 1).cloned();
            break;
        }
        if let Some(p) = argv[i].strip_prefix("--config=") {
            path = Some(p.to_owned());
            break;
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let path = PathBuf::from(path);
    let extra = config_flags(&path)?;

    let mut at = 1;
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].as_str();
        if tok == "--workers" || tok == "--config" {
            i += 2;
        } else if tok.starts_with("--workers=") || tok.starts_with("--config=") {
            i += 1;
        } else if COMMAND_WORDS.contains(&tok) {
            at = i + 1;
            i += 1;
            if tok != "simulate" {
                break;
            }
        } else {
            break;
        }
    }
    let mut out = argv;
    out.splice(at..at, extra);
    Ok(out)
}

fn config_flags(path: &Path) -> Outcome<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Failure::from(e).at(path))?;
    let mut flags = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::schema(format!("line {}: expected key=value", n + 1)).at(path));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(Failure::new(
                Kind::Usage,
                format!("line {}: key `{key}` not allowed", n + 1),
            )
            .at(path));
        }
        match value {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            _ => flags.push(format!("--{key}={value}")),
        }
    }
    Ok(flags)
}

/// Comma-separated list with every entry parsed.
pub fn parse_list<T: std::str::FromStr>(name: &str, s: &str) -> Outcome<Vec<T>> {
    s.split(',')
        .map(|item| {
            item.trim()
                .parse()
                .map_err(|_| Failure::validation(format!("{name}: cannot parse `{}`", item.trim())))
        })
        .collect()
}
