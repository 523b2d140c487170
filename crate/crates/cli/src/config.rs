//! TOML defaults merged under command-line flags.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use grit_core::grpo::Optimizer;
use grit_core::judge::{AnswerJudge, ImageChoiceJudge, RemoteJudge, RemoteJudgeConfig, RuleJudge};
use grit_core::reward::JudgeMode;
use grit_core::toy::{StateSpace, ToyTrainConfig};
use grit_core::RewardConfig;
use serde::Deserialize;

#[cfg(test)]
use crate::args::Command;
use crate::args::{Cli, JudgeArg, OnOff, OptimizerArg, StateSpaceArg, TrainArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub judge: JudgeSection,
    #[serde(default)]
    pub reward: RewardSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeSection {
    pub mode: Option<JudgeMode>,
    pub url: Option<String>,
    pub timeout_ms: Option<u64>,
    pub retries: Option<u32>,
    pub max_in_flight: Option<usize>,
    pub backoff_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    pub counting_reward: Option<bool>,
    pub bleu_weight: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: Option<usize>,
    pub group_size: Option<usize>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub lr: Option<f64>,
    pub counting_reward: Option<bool>,
    pub tasks_per_step: Option<usize>,
    pub state_space: Option<StateSpace>,
    pub optimizer: Option<Optimizer>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone)]
pub struct JudgeSettings {
    pub mode: JudgeMode,
    pub url: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub max_in_flight: Option<usize>,
    pub backoff: Option<Duration>,
}

/// Everything shared across subcommands after merging flags over the file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub judge: JudgeSettings,
    pub reward: RewardConfig,
    pub file: std::sync::Arc<FileConfig>,
}

impl Settings {
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let mode = match cli.judge {
            Some(JudgeArg::Rule) => JudgeMode::Rule,
            Some(JudgeArg::Remote) => JudgeMode::Remote,
            None => file.judge.mode.unwrap_or_default(),
        };
        let judge = JudgeSettings {
            mode,
            url: cli.judge_url.clone().or_else(|| file.judge.url.clone()),
            timeout: Duration::from_millis(
                cli.judge_timeout_ms
                    .or(file.judge.timeout_ms)
                    .unwrap_or(60_000),
            ),
            retries: cli.judge_retries.or(file.judge.retries).unwrap_or(3),
            max_in_flight: file.judge.max_in_flight,
            backoff: file.judge.backoff_ms.map(Duration::from_millis),
        };
        let mut reward = RewardConfig {
            judge_mode: mode,
            ..RewardConfig::default()
        };
        if let Some(on) = file.reward.counting_reward {
            reward.counting_reward_enabled = on;
        }
        if let Some(w) = file.reward.bleu_weight {
            reward.bleu_weight = w;
        }
        Ok(Self {
            seed: cli.seed.or(file.seed).unwrap_or(0),
            judge,
            reward,
            file: std::sync::Arc::new(file),
        })
    }

    pub fn reward_with(
        &self,
        counting: Option<OnOff>,
        bleu_weight: Option<f64>,
    ) -> Result<RewardConfig> {
        let mut r = self.reward.clone();
        if let Some(c) = counting {
            r.counting_reward_enabled = c.enabled();
        }
        if let Some(w) = bleu_weight {
            r.bleu_weight = w;
        }
        if !(r.bleu_weight.is_finite() && r.bleu_weight >= 0.0) {
            bail!(
                "bleu weight must be a finite non-negative number, got {}",
                r.bleu_weight
            );
        }
        Ok(r)
    }

    pub fn build_judge(&self) -> Result<Judge> {
        match self.judge.mode {
            JudgeMode::Rule => Ok(Judge::Rule(RuleJudge)),
            JudgeMode::Remote => {
                let Some(url) = &self.judge.url else {
                    bail!(
                        "--judge remote needs an endpoint: pass --judge-url <URL> or set judge.url in the config file"
                    );
                };
                let mut cfg = RemoteJudgeConfig::new(url.clone());
                cfg.timeout = self.judge.timeout;
                cfg.max_retries = self.judge.retries;
                if let Some(n) = self.judge.max_in_flight {
                    cfg.max_in_flight = n;
                }
                if let Some(b) = self.judge.backoff {
                    cfg.backoff = b;
                }
                Ok(Judge::Remote(RemoteJudge::new(cfg)))
            }
        }
    }

    pub fn train_config(&self, args: &TrainArgs) -> Result<ToyTrainConfig> {
        let t = &self.file.train;
        let mut cfg = ToyTrainConfig {
            seed: self.seed,
            ..ToyTrainConfig::default()
        };
        if let Some(v) = args.steps.or(t.steps) {
            cfg.steps = v;
        }
        if let Some(v) = args.group_size.or(t.group_size) {
            cfg.grpo.group_size = v;
        }
        if let Some(v) = args.epsilon.or(t.epsilon) {
            cfg.grpo.epsilon = v;
        }
        if let Some(v) = args.beta.or(t.beta) {
            cfg.grpo.beta = v;
        }
        if let Some(v) = args.lr.or(t.lr) {
            cfg.grpo.learning_rate = v;
        }
        if let Some(v) = args.tasks_per_step.or(t.tasks_per_step) {
            cfg.tasks_per_step = v;
        }
        let counting = args
            .counting_reward
            .map(OnOff::enabled)
            .or(t.counting_reward)
            .or(self.file.reward.counting_reward);
        if let Some(on) = counting {
            cfg.reward.counting_reward_enabled = on;
        }
        if let Some(w) = self.file.reward.bleu_weight {
            cfg.reward.bleu_weight = w;
        }
        cfg.state_space = match args.state_space {
            Some(StateSpaceArg::KPosition) => StateSpace::KPosition,
            Some(StateSpaceArg::KPhaseCount) => StateSpace::KPhaseCount,
            None => t.state_space.unwrap_or(cfg.state_space),
        };
        cfg.optimizer = match args.optimizer {
            Some(OptimizerArg::Adam) => Optimizer::adam(),
            Some(OptimizerArg::Sgd) => Optimizer::GradientAscent,
            None => t.optimizer.unwrap_or(cfg.optimizer),
        };
        cfg.grpo
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid training flags: {e}"))?;
        if cfg.grpo.learning_rate <= 0.0 {
            bail!("--lr must be positive, got {}", cfg.grpo.learning_rate);
        }
        if cfg.tasks_per_step == 0 {
            bail!("--tasks-per-step must be at least 1");
        }
        Ok(cfg)
    }
}

pub enum Judge {
    Rule(RuleJudge),
    Remote(RemoteJudge),
}

impl Judge {
    pub fn answer(&self) -> &dyn AnswerJudge {
        match self {
            Judge::Rule(j) => j,
            Judge::Remote(j) => j,
        }
    }

    /// Only the remote judge can look at images.
    pub fn images(&self) -> Option<&dyn ImageChoiceJudge> {
        match self {
            Judge::Rule(_) => None,
            Judge::Remote(j) => Some(j),
        }
    }
}
