use std::path::PathBuf;

use aqakit::curation::{BalanceMode, Selector, ThresholdFormula};
use aqakit::Preset;
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};

fn preset_parser() -> impl TypedValueParser<Value = Preset> {
    PossibleValuesParser::new(Preset::ALL.map(Preset::name))
        .map(|name| name.parse::<Preset>().expect("listed preset"))
}

#[derive(Debug, Parser)]
#[command(
    name = "aqakit",
    version,
    about = "Guided decoding, curation, rewards and evaluation for multiple-choice audio QA"
)]
pub struct Cli {
    /// Seed for sampling and balancing (overrides a pipeline config's seed).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Log verbosity on standard error.
    #[arg(long, global = true, value_name = "LEVEL", default_value = "warn")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a pattern to a minimal DFA and print a summary.
    Compile(CompileArgs),
    /// Print the tokens allowed in one DFA state.
    Mask(MaskArgs),
    /// Generate one constrained output with a uniform scorer.
    Sample(SampleArgs),
    /// Label records with a difficulty score.
    Score(ScoreArgs),
    /// Cap or drop over-represented categories.
    Balance(BalanceArgs),
    /// Select a curriculum stage by difficulty.
    Stage(StageArgs),
    /// Compute rewards for generations against reference answers.
    Reward(RewardArgs),
    /// Group-normalize rewards into advantages.
    Advantages(AdvantagesArgs),
    /// Top-1 exact-match accuracy, overall and per part.
    Evaluate(EvaluateArgs),
    /// Majority-vote several prediction sets.
    Ensemble(EnsembleArgs),
    /// Multi-stage training pipeline manifests.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    /// Resolve each stage's records and write one manifest per stage.
    Emit(EmitArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Format {
    /// Output-format pattern (full-match).
    #[arg(long, value_name = "PATTERN")]
    pub regex: Option<String>,
    /// Named format preset.
    #[arg(long, value_name = "NAME", value_parser = preset_parser())]
    pub preset: Option<Preset>,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    #[command(flatten)]
    pub format: Format,
    /// Also write the automaton as a Graphviz DOT file.
    #[arg(long, value_name = "PATH")]
    pub dot: Option<PathBuf>,
    /// Maximum number of DFA states before giving up.
    #[arg(long, value_name = "N", default_value_t = aqakit::dfa::DEFAULT_MAX_STATES)]
    pub max_states: usize,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Vocabulary JSON.
    #[arg(long, value_name = "PATH")]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub format: Format,
    /// DFA state to query (the start state is 0).
    #[arg(long, value_name = "ID")]
    pub state: u32,
    /// Print the mask as hex of the packed little-endian bitset.
    #[arg(long)]
    pub packed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    Greedy,
    Random,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Vocabulary JSON.
    #[arg(long, value_name = "PATH")]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub format: Format,
    /// Token choice rule.
    #[arg(long, value_enum, default_value = "random")]
    pub policy: Policy,
    /// Length budget including EOS.
    #[arg(long, value_name = "N", default_value_t = 256)]
    pub max_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerKind {
    Stub,
    Endpoint,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Input QA JSONL.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Output QA JSONL with difficulty filled in.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Difficulty source.
    #[arg(long, value_enum)]
    pub scorer: ScorerKind,
    /// Completion endpoint for `--scorer endpoint`; receives the prompt as a text/plain POST.
    #[arg(long, value_name = "URL", required_if_eq("scorer", "endpoint"))]
    pub endpoint_url: Option<String>,
    /// Extra request header, e.g. "Authorization: Bearer ...".
    #[arg(long, value_name = "NAME: VALUE")]
    pub endpoint_header: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long, value_name = "SECS", default_value_t = 60)]
    pub timeout: u64,
    /// Attempts per record before marking it unscored.
    #[arg(long, value_name = "N", default_value_t = 3)]
    pub attempts: usize,
    /// Concurrent scorer requests.
    #[arg(long, value_name = "N", default_value_t = 4)]
    pub parallelism: usize,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    /// Input QA JSONL (every record needs a category).
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Output QA JSONL.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Threshold multiplier, > 0.
    #[arg(long, value_name = "F", allow_hyphen_values = true)]
    pub theta: f64,
    /// What happens to categories above the threshold.
    #[arg(long, value_name = "MODE", default_value = "cap")]
    pub mode: BalanceMode,
    /// `sigma`: T = mean + theta * std; `mu`: T = theta * mean.
    #[arg(long, value_name = "FORMULA", default_value = "sigma")]
    pub threshold_formula: ThresholdFormula,
    /// Balance report JSON.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Input scored QA JSONL.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Output QA JSONL.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// easy:<t> keeps difficulty < t, hard:<t> keeps difficulty > t, full keeps all.
    #[arg(long, value_name = "SELECTOR")]
    pub selector: Selector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CreditArg {
    Subsumed,
    Additive,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    /// Generations JSONL: {"id": ..., "text": ...}; several lines may share an id.
    #[arg(long, value_name = "PATH")]
    pub generations: PathBuf,
    /// Reference QA JSONL; the answer choice gives the letter and content.
    #[arg(long, value_name = "PATH")]
    pub references: PathBuf,
    /// Format preset checked for the format reward.
    #[arg(long, value_name = "NAME", value_parser = preset_parser())]
    pub preset: Preset,
    /// Output JSONL, one reward breakdown per generation.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Whether partial credits stack on a full match.
    #[arg(long, value_enum, default_value = "subsumed")]
    pub credit: CreditArg,
}

#[derive(Debug, Args)]
pub struct AdvantagesArgs {
    /// Rewards JSONL: numbers, or objects with a `total` field (as written by `reward`).
    #[arg(long, value_name = "PATH")]
    pub rewards: PathBuf,
    /// Generations per prompt.
    #[arg(long, value_name = "N")]
    pub group_size: usize,
    /// Output JSONL; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions JSONL.
    #[arg(long, value_name = "PATH")]
    pub preds: PathBuf,
    /// Reference QA JSONL.
    #[arg(long, value_name = "PATH")]
    pub refs: PathBuf,
    /// Report JSON; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Prediction JSONL files, one per model.
    #[arg(long, value_name = "PATH", num_args = 1.., required = true)]
    pub preds: Vec<PathBuf>,
    /// Comma-separated model tags, highest priority first, for breaking ties.
    #[arg(long, value_name = "m1,m2,...", value_delimiter = ',')]
    pub priority: Vec<String>,
    /// Output predictions JSONL.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Model tag written on ensembled predictions.
    #[arg(long, value_name = "TAG", default_value = "ensemble")]
    pub tag: String,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    /// Pipeline config JSON.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Directory manifest paths are resolved against (defaults to the config's directory).
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}
