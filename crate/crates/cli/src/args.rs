use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use tspsense::evaluation::EnsembleMode;
use tspsense::Task;
use tspsense_probes::{Family, Objective, Selection};

#[derive(Debug, Parser)]
#[command(name = "tspsense", version, about = "Exact TSP sensitivity labels, baselines, probes and evaluation")]
pub struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info", env = "TSPSENSE_LOG")]
    pub log_level: String,

    /// Directory that relative paths are resolved against.
    #[arg(long, global = true, env = "TSPSENSE_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a dataset of uniform random instances.
    Gen(GenArgs),
    /// Compute exact sensitivity labels for every instance.
    Label(LabelArgs),
    /// Score candidates with a geometric baseline (or the label oracle).
    Baseline(BaselineArgs),
    /// Split instance ids into train/val/test.
    Split(SplitArgs),
    /// Write a random-embedding activation cache for a dataset.
    SynthCache(SynthCacheArgs),
    /// Train a probe on candidate features.
    ProbeTrain(ProbeTrainArgs),
    /// Score a dataset with a trained probe.
    ProbeScore(ProbeScoreArgs),
    /// Evaluate score files against labels.
    Eval(EvalArgs),
    /// Draw an instance and its tour as SVG, optionally colored by impact.
    Render(RenderArgs),
    /// Run the HTTP what-if service.
    Serve(ServeArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Instance k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LabelArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// removal or forbid
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    /// Keep an existing output and label only the missing instances.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// nn, splice, detour, 2opt or oracle
    #[arg(long)]
    pub method: String,
    /// Labels supplying base tours (required for oracle; otherwise tours are re-solved).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthCacheArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Hyperparameters default to the reference settings for the family and the
/// label task; every flag overrides one field.
#[derive(Debug, Args, Serialize)]
pub struct ProbeTrainArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    /// Activation cache; geometry features are used when absent.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub family: Family,
    #[arg(long)]
    pub objective: Option<Objective>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ff_width: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub selection: Option<Selection>,
    /// Also train this many seeds (seed, seed+1, ...) and report mean and std.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeScoreArgs {
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Labels supplying base tours; tours are re-solved when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Activation cache, when the probe was trained on one.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Method name becomes probe.<name>.
    #[arg(long, default_value = "probe")]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Records,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// One or more score files.
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Split to report on (all labeled instances when --splits is absent).
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Two method names joined by '+', e.g. probe.st+baseline.nn
    #[arg(long)]
    pub ensemble: Option<String>,
    /// zscore or raw; defaults to zscore for removal and raw for forbid.
    #[arg(long)]
    pub mode: Option<EnsembleMode>,
    /// Grid searched on the validation split (default 0,0.1,...,1).
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    /// Fixed weight instead of a grid search.
    #[arg(long, conflicts_with = "alpha_grid")]
    pub alpha: Option<f64>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Instance id (the first instance when absent).
    #[arg(long)]
    pub instance: Option<String>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, conflicts_with = "labels")]
    pub scores: Option<PathBuf>,
    /// Use the heuristic tour when the instance is too large to solve exactly.
    #[arg(long)]
    pub heuristic: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Solve-cache entries per session.
    #[arg(long, default_value_t = tspsense_service::DEFAULT_CACHE_SIZE)]
    pub cache_size: usize,
    #[arg(long, default_value_t = tspsense_service::DEFAULT_EXACT_CAP)]
    pub exact_cap: usize,
    /// Directory for append-only session journals.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// NAME=PROBE_FILE or NAME=PROBE_FILE,cache=CACHE_FILE
    #[arg(long)]
    pub probe: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
