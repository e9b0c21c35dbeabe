mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qfsum::corpus::SplitName;
use qfsum::eval::TopK;

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "qfsum",
    version,
    about = "Query-focused summarization: extractors, summarizers, evaluation"
)]
pub struct Cli {
    /// JSON config file. Command-line flags take precedence over it.
    #[arg(long, global = true, env = "QFSUM_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cmd {
    /// Synthesize a corpus, or load and validate one, and write it out.
    Prepare(PrepareArgs),
    /// Dump extractor supervision (ROUGE relevance or binary labels).
    BuildTargets(BuildTargetsArgs),
    TrainExtractor(TrainExtractorArgs),
    TrainSummarizer(TrainSummarizerArgs),
    /// Rank utterances per query and write budgeted extracts.
    Rank(RankArgs),
    /// Decode summaries with a trained summarizer.
    Summarize(SummarizeArgs),
    /// Extractor (lexical and span overlap) and summarizer (ROUGE) tables.
    Evaluate(EvaluateArgs),
    /// Fine-tune a summarizer through a sequence of corpora.
    Transfer(TransferArgs),
    /// Render saved table rows as CSV or markdown.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormatArg {
    Jsonl,
    Qmsum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Meeting,
    Document,
}

#[derive(Args, Debug, Serialize)]
pub struct PrepareArgs {
    /// Output directory for the corpus files.
    #[arg(long)]
    pub out: PathBuf,
    /// Generate a synthetic corpus from --seed.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub synthetic: bool,
    /// Existing dataset to validate and convert.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DatasetFormatArg::Jsonl)]
    pub format: DatasetFormatArg,
    #[arg(long, default_value_t = 40)]
    pub meetings: usize,
    #[arg(long, default_value_t = 3)]
    pub queries_per_meeting: usize,
    #[arg(long, value_enum, default_value_t = TaskArg::Meeting)]
    pub task: TaskArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    Regression,
    Binary,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildTargetsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: SplitName,
    #[arg(long, value_enum, default_value_t = TargetMode::Regression)]
    pub mode: TargetMode,
    #[arg(long, default_value_t = 1)]
    pub positives: usize,
    #[arg(long, default_value_t = 7)]
    pub negatives: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 1)]
    pub enc_layers: usize,
    #[arg(long, default_value_t = 1)]
    pub dec_layers: usize,
    #[arg(long, default_value_t = 64)]
    pub ff: usize,
    /// Encoder/decoder position limit (defaults depend on the model kind).
    #[arg(long)]
    pub max_positions: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Minimum corpus frequency for a word to enter the vocabulary.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub accumulation_steps: usize,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKindArg {
    /// Single encoder over `query [SEP] passage`, regressed on ROUGE relevance.
    Relreg,
    /// Tied dual encoder with type tokens, regressed on ROUGE relevance.
    Relregtt,
    /// Untied dual encoder trained with in-batch negatives.
    Dpr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMetric {
    /// Mean reciprocal rank of the first gold utterance.
    Mrr,
    /// Gold-utterance recall of the budgeted extract.
    Recall,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainExtractorArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ExtractorKindArg::Relreg)]
    pub kind: ExtractorKindArg,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Validation metric used to pick the epoch.
    #[arg(long, value_enum, default_value_t = SelectMetric::Mrr)]
    pub select: SelectMetric,
    #[arg(long, default_value_t = qfsum::eval::DEFAULT_BUDGET)]
    pub budget: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SummarizerKindArg {
    Dense,
    Segenc,
    Localglobal,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SummarizerArgs {
    #[arg(long, value_enum, default_value_t = SummarizerKindArg::Dense)]
    pub kind: SummarizerKindArg,
    /// Positions reserved for the query, separator included.
    #[arg(long, default_value_t = 16)]
    pub query_budget: usize,
    #[arg(long, default_value_t = 32)]
    pub max_target_len: usize,
    #[arg(long, default_value_t = 4)]
    pub beams: usize,
    #[arg(long, default_value_t = 1.0)]
    pub length_penalty: f64,
    #[arg(long, default_value_t = 64)]
    pub segment_length: usize,
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    #[arg(long, default_value_t = 4096)]
    pub max_input_tokens: usize,
    /// Local attention window (local+global models).
    #[arg(long, default_value_t = 32)]
    pub window: usize,
    /// Validate on at most this many validation queries.
    #[arg(long)]
    pub val_limit: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainSummarizerArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Output of `rank`; summarize extracts instead of whole meetings.
    #[arg(long)]
    pub extracts: Option<PathBuf>,
    #[command(flatten)]
    pub summarizer: SummarizerArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorSource {
    Lead,
    Oracle,
    /// A trained extractor given by --checkpoint.
    Checkpoint,
}

#[derive(Args, Debug, Serialize)]
pub struct RankArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub extractor: ExtractorSource,
    #[arg(long, required_if_eq("extractor", "checkpoint"))]
    pub checkpoint: Option<PathBuf>,
    /// Splits to rank (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "test")]
    pub split: Vec<SplitName>,
    /// Token budget of the written extracts.
    #[arg(long, default_value_t = qfsum::eval::DEFAULT_BUDGET)]
    pub budget: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    #[arg(long)]
    pub extracts: Option<PathBuf>,
    /// Override the checkpoint's beam width.
    #[arg(long)]
    pub beams: Option<usize>,
    /// Summarize only the first N queries.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Markdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldArg {
    F1,
    Recall,
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_owned(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=DIR, got {s:?}")),
    }
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    /// `rank` output to score, as NAME=DIR (repeatable).
    #[arg(long, value_parser = parse_named)]
    pub rankings: Vec<(String, PathBuf)>,
    /// `summarize` output to score, as NAME=DIR (repeatable).
    #[arg(long, value_parser = parse_named)]
    pub summaries: Vec<(String, PathBuf)>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,15,all")]
    pub topk: Vec<TopK>,
    #[arg(long, default_value_t = qfsum::eval::DEFAULT_BUDGET)]
    pub budget: usize,
    /// Also write per-query span precision/recall at the budget.
    #[arg(long)]
    pub span_overlap: bool,
    #[arg(long, value_enum, default_value_t = FieldArg::F1)]
    pub field: FieldArg,
}

#[derive(Args, Debug, Serialize)]
pub struct TransferArgs {
    /// Prepared corpus directories in training order; the last is the target.
    #[arg(long = "stage", required = true)]
    pub stages: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Epochs per stage (comma separated); defaults to --epochs for each.
    #[arg(long, value_delimiter = ',')]
    pub stage_epochs: Vec<usize>,
    #[command(flatten)]
    pub summarizer: SummarizerArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// Table rows written by `evaluate` (table1.json or table5.json).
    #[arg(long)]
    pub rows: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    pub format: FormatArg,
    #[arg(long, value_enum, default_value_t = FieldArg::F1)]
    pub field: FieldArg,
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "message": message.replace('\n', " ") });
    eprintln!("{line}");
    ExitCode::from(if kind == "usage" { 2 } else { 1 })
}

fn usage_message(e: &clap::Error) -> String {
    let rendered = e.to_string();
    let first = rendered
        .lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("invalid usage");
    first.trim_start_matches("error: ").to_owned()
}

fn parse(argv: &[String]) -> Result<Cli, ExitCode> {
    use clap::error::ErrorKind;
    let usage = |e: clap::Error| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            ExitCode::SUCCESS
        }
        _ => fail("usage", &usage_message(&e)),
    };
    let root = Cli::command();
    let matches = root.clone().try_get_matches_from(argv).map_err(usage)?;
    let mut argv = argv.to_vec();
    if let Some(path) = matches.get_one::<PathBuf>("config") {
        let extra = config::load(path)
            .and_then(|c| config::extra_args(&root, &matches, &c))
            .map_err(|e| fail("validation", &format!("{e:#}")))?;
        argv.extend(extra);
    }
    let matches = root.try_get_matches_from(&argv).map_err(usage)?;
    Cli::from_arg_matches(&matches).map_err(usage)
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(q) = cause.downcast_ref::<qfsum::Error>() {
            return match q {
                qfsum::Error::Io(_) => "io",
                _ => "validation",
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "validation"
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match parse(&argv) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match commands::run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(error_kind(&e), &format!("{e:#}")),
    }
}
