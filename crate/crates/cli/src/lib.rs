//! The `grit` command line.

pub mod args;
pub mod config;
pub mod corpus;

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use grit_core::metrics::OverlayStyle;
use grit_core::parse_trace;
use grit_core::prompts::PROMPT_SUFFIX;
use grit_core::records::{read_jsonl, write_jsonl, SampleRecord, TraceRecord};
use grit_core::toy::{evaluate, train, PolicyFile, ToyEvaluation, ToyTrainConfig};
use grit_core::trace::mask_coordinates;
use serde::Serialize;

pub use args::Cli;
use args::{Command, EvalArgs, JudgeAnswerArgs, Metric, ParseArgs, ScoreArgs, TrainArgs};
pub use config::Settings;
pub use corpus::{cmd_eval, cmd_score, CorpusOutput, EvalOptions, MetricSet};

/// Offset between the training seed and the seed of the closing evaluation.
pub const HELD_OUT_SEED_OFFSET: u64 = 10_007;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Some records failed; the rest were written.
    Partial,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::Partial => 1,
        }
    }
}

/// Exit code for errors that stop a run.
pub const FATAL_EXIT: u8 = 2;

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<Status> {
    let settings = Settings::resolve(cli)?;
    match &cli.command {
        Command::Parse(a) => run_parse(a, stdout),
        Command::Score(a) => run_score(a, &settings, stdout),
        Command::Eval(a) => run_eval(a, &settings, stdout),
        Command::TrainToy(a) => run_train(a, &settings, stdout),
        Command::JudgeAnswer(a) => run_judge(a, &settings, stdout),
    }
}

fn run_parse(args: &ParseArgs, stdout: &mut dyn Write) -> Result<Status> {
    if args.emit_prompt_suffix {
        writeln!(stdout, "{PROMPT_SUFFIX}")?;
        return Ok(Status::Success);
    }
    let mut text = String::new();
    match args.input.as_deref() {
        Some(p) if p != Path::new("-") => {
            text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        }
        _ => {
            std::io::stdin()
                .read_to_string(&mut text)
                .context("reading stdin")?;
        }
    }
    if args.mask {
        writeln!(stdout, "{}", mask_coordinates(&text))?;
    } else {
        serde_json::to_writer(&mut *stdout, &parse_trace(&text))?;
        writeln!(stdout)?;
    }
    Ok(Status::Success)
}

fn load_corpus(samples: &Path, traces: &Path) -> Result<(Vec<SampleRecord>, Vec<TraceRecord>)> {
    let s = read_jsonl(samples).with_context(|| format!("samples file {}", samples.display()))?;
    let t = read_jsonl(traces).with_context(|| format!("traces file {}", traces.display()))?;
    Ok((s, t))
}

fn emit<T: Serialize>(lines: &[T], out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_jsonl(BufWriter::new(f), lines)?;
        }
        None => write_jsonl(stdout, lines)?,
    }
    Ok(())
}

fn status(errors: usize) -> Status {
    if errors == 0 {
        Status::Success
    } else {
        Status::Partial
    }
}

fn run_score(args: &ScoreArgs, settings: &Settings, stdout: &mut dyn Write) -> Result<Status> {
    let reward = settings.reward_with(args.counting_reward, args.bleu_weight)?;
    let judge = settings.build_judge()?;
    let (samples, traces) = load_corpus(&args.samples, &args.traces)?;
    let out = cmd_score(&samples, &traces, &reward, judge.answer())?;
    emit(&out.lines, args.out.as_deref(), stdout)?;
    Ok(status(out.errors))
}

fn run_eval(args: &EvalArgs, settings: &Settings, stdout: &mut dyn Write) -> Result<Status> {
    let metrics = MetricSet {
        acc: args.metrics.contains(&Metric::Acc),
        giou: args.metrics.contains(&Metric::Giou),
        correlation: args.metrics.contains(&Metric::Correlation),
    };
    let judge = settings.build_judge()?;
    let (samples, traces) = load_corpus(&args.samples, &args.traces)?;
    let opts = EvalOptions {
        metrics,
        repeats: args.repeats,
        seed: settings.seed,
        style: OverlayStyle::default(),
        image_root: args
            .samples
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    let out = cmd_eval(&samples, &traces, judge.answer(), judge.images(), &opts)?;
    emit(&out.lines, args.out.as_deref(), stdout)?;
    Ok(status(out.errors))
}

/// Printed to stdout when training ends.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub steps: usize,
    pub seed: u64,
    pub final_ma_r_format: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_ma_r_count: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out: Option<ToyEvaluation>,
    pub log: PathBuf,
    pub policy: PathBuf,
}

fn default_policy_path(log: &Path) -> PathBuf {
    let stem = log
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "train".into());
    log.with_file_name(format!("{stem}.policy.json"))
}

/// Trains, then writes the per-step log and the final policy.
pub fn cmd_train_toy(
    config: &ToyTrainConfig,
    log_path: &Path,
    policy_path: &Path,
    eval_tasks: usize,
) -> Result<TrainReport> {
    let out = train(config)?;
    let f = File::create(log_path).with_context(|| format!("creating {}", log_path.display()))?;
    write_jsonl(BufWriter::new(f), &out.log.records)?;
    let f =
        File::create(policy_path).with_context(|| format!("creating {}", policy_path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &PolicyFile::new(&out.policy, config))?;
    writeln!(w)?;
    w.flush()?;
    let held_out = if eval_tasks > 0 {
        Some(evaluate(
            &out.policy,
            config.state_space,
            &config.reward,
            eval_tasks,
            config.seed.wrapping_add(HELD_OUT_SEED_OFFSET),
            false,
        )?)
    } else {
        None
    };
    let counts: Vec<&grit_core::toy::StepRecord> = out.log.records.iter().collect();
    let tail = &counts[counts.len().saturating_sub(100)..];
    let r_counts: Vec<f64> = tail.iter().filter_map(|r| r.mean_r_count).collect();
    Ok(TrainReport {
        steps: config.steps,
        seed: config.seed,
        final_ma_r_format: out.log.tail_mean(100, |r| r.mean_r_format),
        final_ma_r_count: (!r_counts.is_empty())
            .then(|| r_counts.iter().sum::<f64>() / r_counts.len() as f64),
        held_out,
        log: log_path.to_path_buf(),
        policy: policy_path.to_path_buf(),
    })
}

fn run_train(args: &TrainArgs, settings: &Settings, stdout: &mut dyn Write) -> Result<Status> {
    let config = settings.train_config(args)?;
    let policy_path = args
        .policy_out
        .clone()
        .unwrap_or_else(|| default_policy_path(&args.log));
    let report = cmd_train_toy(&config, &args.log, &policy_path, args.eval_tasks)?;
    serde_json::to_writer(&mut *stdout, &report)?;
    writeln!(stdout)?;
    Ok(Status::Success)
}

fn run_judge(
    args: &JudgeAnswerArgs,
    settings: &Settings,
    stdout: &mut dyn Write,
) -> Result<Status> {
    let judge = settings.build_judge()?;
    let verdict = judge
        .answer()
        .judge_answer(&args.question, &args.predicted, &args.answer)?;
    serde_json::to_writer(
        &mut *stdout,
        &serde_json::json!({
            "score": verdict.score,
            "s_gpt": verdict.binary(),
            "raw_response": verdict.raw_response,
        }),
    )?;
    writeln!(stdout)?;
    Ok(Status::Success)
}
