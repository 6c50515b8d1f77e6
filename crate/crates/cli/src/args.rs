use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use orex_core::{Consistency, DemoBatches, Stage};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "orex", version, about = "Open relation extraction with a discoverer/predictor model pair")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a dataset into normalized train/test files and a gold sidecar.
    Ingest(IngestArgs),
    /// Run discovery, denoising and prediction (or a prefix of them).
    Run(RunArgs),
    /// Measure accuracy with and without the gold relation among the demonstrations.
    Probe(ProbeArgs),
    /// Score a prediction file against a gold sidecar.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Fewrel,
    Tacred,
    Normalized,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub format: Format,
    /// Input file; repeat to concatenate several files in order.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// FewRel relation-name mapping (pid2name.json).
    #[arg(long)]
    pub pid2name: Option<PathBuf>,
    /// Number of leading relations treated as known.
    #[arg(long)]
    pub known_first: usize,
    /// Subsample new relations to the long-tail counts.
    #[arg(long)]
    pub long_tail: bool,
    /// Hold out part of each known relation into the test pool.
    #[arg(long)]
    pub mixed: bool,
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Simulator,
    Http,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfusionKind {
    Listed,
    Novel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawScopeArg {
    Attempt,
    Request,
}

fn parse_d(s: &str) -> Result<DemoBatches, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(DemoBatches::Auto);
    }
    s.parse().map(DemoBatches::Fixed).map_err(|_| format!("expected `auto` or a positive integer, got `{s}`"))
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    match s {
        "discovery" => Ok(Stage::Discovery),
        "denoising" => Ok(Stage::Denoising),
        "prediction" => Ok(Stage::Prediction),
        _ => Err(format!("expected discovery, denoising or prediction, got `{s}`")),
    }
}

fn parse_consistency(s: &str) -> Result<Consistency, String> {
    match s {
        "unanimous" => Ok(Consistency::Unanimous),
        "majority" => Ok(Consistency::Majority),
        _ => Err(format!("expected unanimous or majority, got `{s}`")),
    }
}

/// Backend selection shared by `run` and `probe`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendArgs {
    /// simulator (default), http or replay.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendKind>,
    /// Base URL of an OpenAI-compatible server.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Concurrent requests per stage (default 1).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_timeout_ms: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u32>,
    /// Simulator hit rate when the gold relation is listed (default 0.9).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_hit_target_in_demos: Option<f64>,
    /// Simulator hit rate otherwise (default 0.5).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_hit_otherwise: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub novel_pool: Option<u32>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draw_scope: Option<DrawScopeArg>,
    /// Simulator seed (defaults to --seed).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_seed: Option<u64>,
    /// Recorded completions to serve with `--backend replay`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay: Option<PathBuf>,
    /// Save every completion to this file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rd_template: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rp_template: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    /// Sampling temperature for every stage.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f32>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct RunArgs {
    /// TOML file with any of these options; flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Gold sidecar; enables the report and the simulator.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Demonstrations per prompt (default 4).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Discovery attempts per instance (default 3).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Denoising rounds (default 3; 0 skips denoising).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    /// Denoising batches per candidate: auto or a count.
    #[arg(long, value_parser = parse_d)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<DemoBatches>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// discovery, denoising or prediction.
    #[arg(long, value_parser = parse_stage)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_after: Option<Stage>,
    /// unanimous or majority.
    #[arg(long, value_parser = parse_consistency)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<Consistency>,
    #[command(flatten)]
    #[serde(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Labeled normalized corpus to probe.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    /// Demonstration counts, comma separated (default 4,8,16).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction lines as written by `run`.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Discovery candidates for pass@K; defaults to discovery.jsonl beside
    /// the predictions when present.
    #[arg(long)]
    pub discovery: Option<PathBuf>,
    /// Report file (default: report.json beside the predictions).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
