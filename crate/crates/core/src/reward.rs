//! GRPO-GR task reward: format, counting and judge-aided answer components.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::judge::{AnswerJudge, JudgeError};
use crate::trace::GroundedTrace;

/// Weight applied to each satisfied format / counting indicator.
pub const INDICATOR_REWARD: f64 = 0.5;
pub const DEFAULT_BLEU_WEIGHT: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("counting reward requested but disabled in the reward config")]
    CountingDisabled,
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    #[default]
    Rule,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub counting_reward_enabled: bool,
    pub bleu_weight: f64,
    pub judge_mode: JudgeMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            counting_reward_enabled: true,
            bleu_weight: DEFAULT_BLEU_WEIGHT,
            judge_mode: JudgeMode::Rule,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub s_st: f64,
    pub s_bf: f64,
    pub r_format: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_count: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_gpt: Option<f64>,
    pub s_bleu: f64,
    pub r_ans: f64,
    pub total: f64,
}

/// What a trace is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnswerKey<'a> {
    pub question: &'a str,
    pub answer: &'a str,
    /// Present only for counting tasks.
    pub gt_count: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormatReward {
    pub s_st: f64,
    pub s_bf: f64,
    pub r_format: f64,
}

fn indicator(cond: bool) -> f64 {
    if cond {
        INDICATOR_REWARD
    } else {
        0.0
    }
}

pub fn format_reward(trace: &GroundedTrace) -> FormatReward {
    let r = trace.token_report;
    let s_st = indicator(r.think_pair_ok) + indicator(r.rethink_pair_ok && r.pairs_ordered_ok);
    let s_bf = indicator(!trace.boxes.is_empty());
    FormatReward {
        s_st,
        s_bf,
        r_format: s_st + s_bf,
    }
}

pub fn counting_reward(
    trace: &GroundedTrace,
    gt_count: u32,
    config: &RewardConfig,
) -> Result<f64, RewardError> {
    if !config.counting_reward_enabled {
        return Err(RewardError::CountingDisabled);
    }
    Ok(indicator(trace.boxes.len() == gt_count as usize))
}

fn bleu_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Sentence-level BLEU-1: clipped unigram precision times brevity penalty,
/// no smoothing.
pub fn bleu1(candidate: &str, reference: &str) -> f64 {
    let cand = bleu_tokens(candidate);
    let refs = bleu_tokens(reference);
    if cand.is_empty() {
        return 0.0;
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in &refs {
        *ref_counts.entry(t.as_str()).or_default() += 1;
    }
    let mut matched = 0usize;
    for t in &cand {
        if let Some(n) = ref_counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                matched += 1;
            }
        }
    }
    let c = cand.len() as f64;
    let r = refs.len() as f64;
    let precision = matched as f64 / c;
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    precision * bp
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnswerReward {
    pub s_gpt: f64,
    pub s_bleu: f64,
    pub r_ans: f64,
    /// Unthresholded judge score.
    pub judge_score: f64,
}

pub fn answer_reward(
    question: &str,
    predicted: &str,
    gt_answer: &str,
    judge: &dyn AnswerJudge,
    config: &RewardConfig,
) -> Result<AnswerReward, RewardError> {
    let verdict = judge.judge_answer(question, predicted, gt_answer)?;
    let s_gpt = verdict.binary();
    let s_bleu = bleu1(predicted, gt_answer);
    Ok(AnswerReward {
        s_gpt,
        s_bleu,
        r_ans: s_gpt + config.bleu_weight * s_bleu,
        judge_score: verdict.score,
    })
}

pub fn total_reward(
    trace: &GroundedTrace,
    key: &AnswerKey<'_>,
    config: &RewardConfig,
    judge: &dyn AnswerJudge,
) -> Result<RewardBreakdown, RewardError> {
    let fmt = format_reward(trace);
    let r_count = match key.gt_count {
        Some(k) if config.counting_reward_enabled => Some(counting_reward(trace, k, config)?),
        _ => None,
    };
    let ans = answer_reward(
        key.question,
        trace.answer_or_empty(),
        key.answer,
        judge,
        config,
    )?;
    Ok(RewardBreakdown {
        s_st: fmt.s_st,
        s_bf: fmt.s_bf,
        r_format: fmt.r_format,
        r_count,
        s_gpt: Some(ans.s_gpt),
        s_bleu: ans.s_bleu,
        r_ans: ans.r_ans,
        total: fmt.r_format + r_count.unwrap_or(0.0) + ans.r_ans,
    })
}
