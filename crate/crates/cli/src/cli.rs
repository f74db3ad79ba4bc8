use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ctxcomp::{BudgetScope, FilterMode};

use crate::config::ProviderSpec;

#[derive(Debug, Parser)]
#[command(name = "ctxcomp", version, about = "Query-guided context compression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add compressed documents to every record of a JSONL dataset.
    Compress(CompressArgs),
    /// Ask an OpenAI-compatible endpoint for one answer per record.
    Generate(GenerateArgs),
    /// Score predictions against gold records.
    Eval(EvalArgs),
    /// Emit copies of each record with the gold document moved to given ranks.
    Sweep(SweepArgs),
    /// Write the filled prompt of every document, for offline attention recording.
    Prompts(PromptsArgs),
    /// Write reference-model attention records in the recorded-provider layout.
    Record(RecordArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct PromptOptions {
    /// Prompt template file with {s}, {c} and {q} placeholders.
    #[arg(long, value_name = "PATH")]
    pub template: Option<PathBuf>,
    /// Flat TOML config; flags take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Instruction for records that carry none.
    #[arg(long)]
    pub instruction: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CompressArgs {
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output JSONL; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Compression ratio R >= 1; keeps 1/R of the words.
    #[arg(long, value_name = "R")]
    pub ratio: Option<f64>,
    #[arg(long, value_name = "phrase|sentence|dynamic")]
    pub mode: Option<FilterMode>,
    #[arg(long, value_name = "per-doc|global")]
    pub scope: Option<BudgetScope>,
    #[arg(long, value_name = "ref|recorded:DIR|remote:URL")]
    pub provider: Option<ProviderSpec>,
    #[arg(long, value_name = "F")]
    pub sigma: Option<f64>,
    #[arg(long, value_name = "N")]
    pub radius: Option<usize>,
    /// Seed of the reference model.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Include per-word scores and selection flags.
    #[arg(long)]
    pub trace: bool,
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub prompt: PromptOptions,
}

#[derive(Debug, Args, Clone, Default)]
pub struct GenerateArgs {
    /// Records, usually the output of `compress`.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Predictions JSONL ({"id", "prediction"}); stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_name = "N")]
    pub max_tokens: Option<u32>,
    #[arg(long, value_name = "SECS")]
    pub timeout: Option<f64>,
    /// Upper bound on concurrent requests.
    #[arg(long, value_name = "N")]
    pub max_in_flight: Option<usize>,
    /// Use the original documents even when compressed ones are present.
    #[arg(long)]
    pub uncompressed: bool,
    #[command(flatten)]
    pub prompt: PromptOptions,
}

#[derive(Debug, Args, Clone, Default)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub gold: PathBuf,
    /// Comma-separated subset of accuracy, rouge_l, em_recall.
    #[arg(long, value_delimiter = ',', default_value = "accuracy,rouge_l,em_recall")]
    pub metrics: Vec<ctxcomp::eval::Metric>,
    /// Report file; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SweepArgs {
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// 1-based gold ranks.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,15,20")]
    pub positions: Vec<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PromptsArgs {
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub prompt: PromptOptions,
}

#[derive(Debug, Args, Clone, Default)]
pub struct RecordArgs {
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Directory receiving `<prompt_sha256>.json` files.
    #[arg(long, value_name = "DIR")]
    pub dir: PathBuf,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub prompt: PromptOptions,
}
