use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "grit",
    version,
    about = "Parse, score and evaluate grounded reasoning traces, and train the toy policy"
)]
pub struct Cli {
    /// Seed for every random stream (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Answer judge backend.
    #[arg(long, global = true, value_enum)]
    pub judge: Option<JudgeArg>,
    /// Endpoint of the remote judge.
    #[arg(long, global = true)]
    pub judge_url: Option<String>,
    /// TOML file with defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub judge_timeout_ms: Option<u64>,
    /// Retries after the first remote call.
    #[arg(long, global = true)]
    pub judge_retries: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse one trace and print its structure as JSON.
    Parse(ParseArgs),
    /// Reward every trace against its sample.
    Score(ScoreArgs),
    /// Accuracy, grounding IoU and cross-modal correlation per sample.
    Eval(EvalArgs),
    /// Train the tabular policy on the synthetic counting task.
    TrainToy(TrainArgs),
    /// One judge call, for debugging a judge setup.
    JudgeAnswer(JudgeAnswerArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeArg {
    Rule,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn enabled(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Acc,
    Giou,
    Correlation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StateSpaceArg {
    KPosition,
    KPhaseCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Trace file; `-` or absent reads stdin.
    pub input: Option<PathBuf>,
    /// Print the built-in prompt suffix and exit.
    #[arg(long)]
    pub emit_prompt_suffix: bool,
    /// Print the trace with coordinates masked instead of JSON.
    #[arg(long)]
    pub mask: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub traces: PathBuf,
    /// Output file (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub counting_reward: Option<OnOff>,
    #[arg(long)]
    pub bleu_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "acc,giou")]
    pub metrics: Vec<Metric>,
    /// Correlation trials per sample.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub counting_reward: Option<OnOff>,
    #[arg(long)]
    pub tasks_per_step: Option<usize>,
    #[arg(long, value_enum)]
    pub state_space: Option<StateSpaceArg>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Per-step JSONL log.
    #[arg(long, default_value = "train_log.jsonl")]
    pub log: PathBuf,
    /// Final policy file (default: next to the log, `<stem>.policy.json`).
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
    /// Held-out tasks for the closing evaluation; 0 skips it.
    #[arg(long, default_value_t = 500)]
    pub eval_tasks: usize,
}

#[derive(Debug, Args)]
pub struct JudgeAnswerArgs {
    #[arg(long)]
    pub question: String,
    #[arg(long)]
    pub predicted: String,
    /// Reference answer.
    #[arg(long)]
    pub answer: String,
}
