use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Few-shot demonstration retrieval and LLM-metric evaluation.
#[derive(Parser)]
#[command(name = "fewshot", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Convert a dataset to canonical JSONL and print its counts.
    Ingest(IngestArgs),
    /// Precompute question embeddings into the cache.
    Embed(EmbedArgs),
    /// Precompute demonstration quality biases into the cache.
    Bias(BiasArgs),
    /// Evaluate one retriever configuration and write a report.
    Eval(EvalArgs),
    /// Evaluate several retriever variants with shared caches.
    Ablate(AblateArgs),
    /// Sweep the diversity weight; record DPO and context similarity.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum IngestFormat {
    Jsonl,
    TruthfulqaCsv,
}

#[derive(Args)]
pub struct IngestArgs {
    /// Input dataset file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: IngestFormat,
    /// Canonical JSONL output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum BackendKind {
    /// Deterministic offline backend (constant per-token fallback).
    Mock,
    /// Completions-style HTTP endpoint with echoed logprobs.
    Http,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum EmbedSourceKind {
    /// Deterministic pseudo-embeddings from content hashes.
    Hash,
    /// Precomputed vector file (JSONL hash/vector lines).
    File,
    /// Embeddings-style HTTP endpoint.
    Http,
}

/// Flags shared by every command that runs against a dataset.
#[derive(Args)]
pub struct CommonArgs {
    /// Canonical JSONL dataset (see `ingest`).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Cache directory; defaults to fewshot-cache/<dataset-hash>.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendKind,
    /// Model name (required for http backends).
    #[arg(long)]
    pub model: Option<String>,
    /// Scoring endpoint URL (http backend).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API credential.
    #[arg(long)]
    pub credential_env: Option<String>,
    /// External embedding file to merge into the cache before running.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Retrieved demonstrations per query.
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    /// Relevance/diversity trade-off (1 = pure relevance).
    #[arg(long, default_value_t = 0.75)]
    pub lambda_d: f64,
    /// Relevance/quality-bias trade-off (1 = no bias).
    #[arg(long, default_value_t = 0.95)]
    pub lambda_b: f64,
    /// Maximum in-flight scoring requests.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Prompt template JSON file; defaults to the built-in Q/A template.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// File with one demonstration id per line (Fix variant).
    #[arg(long)]
    pub fixed_ids: Option<PathBuf>,
    /// Per-token log-probability for unfixtured mock scoring.
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub mock_fallback: f64,
    /// First retry delay for transient http failures, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    pub retry_base_ms: u64,
    /// Min-max rescale quality biases to [0,1] over each candidate pool.
    #[arg(long, default_value_t = false)]
    pub rescale_bias: bool,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "hash")]
    pub source: EmbedSourceKind,
    /// Output dimension for the hash source.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
}

#[derive(Args)]
pub struct BiasArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Retriever variant: fix, bias, rel, rel-bias, rel-div, rel-div-bias.
    #[arg(long, default_value = "rel-div-bias")]
    pub method: String,
    /// Output prefix; writes <out>.json, <out>.md and <out>.manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated variants; defaults to all six (Fix only when
    /// --fixed-ids is given).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Output prefix; writes <out>.json, <out>.md and <out>.manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated lambda_d grid values in [0, 1].
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    /// Also write an SVG scatter next to the CSV.
    #[arg(long, default_value_t = false)]
    pub svg: bool,
    /// Output prefix; writes <out>.csv (+ <out>.svg) and <out>.manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}
