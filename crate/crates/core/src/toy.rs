//! Desk-scale counting world for end-to-end GRPO-GR training.
//!
//! A 100×100 image is split into a 4×4 grid; a task places `k ∈ {0..3}`
//! objects on distinct cells and asks how many there are. A tabular policy
//! emits tokens that detokenize into a grounded trace, which is parsed and
//! scored by the real reward engine.
//!
//! Two state encodings are available (see [`StateSpace`]): the bare
//! `(k, position)` table, and `(k, tag phase, boxes so far)`, which
//! summarises the generated prefix the way a decoder's context would.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grpo::{
    grpo_gradient, grpo_objective, kl_categorical, Completion, CompletionGroup, GrpoConfig,
    GrpoError, LogitGradient, Optimizer, OptimizerState, TabularPolicy,
};
use crate::judge::{rule_judge, RuleJudge};
use crate::reward::{total_reward, AnswerKey, RewardBreakdown, RewardConfig, RewardError};
use crate::trace::{
    BoundingBox, BoxMatch, GroundedTrace, TokenPairReport, ANSWER_MARKER, RETHINK_CLOSE,
    RETHINK_OPEN, THINK_CLOSE, THINK_OPEN,
};

pub const IMAGE_SIZE: u32 = 100;
pub const GRID: usize = 4;
pub const CELL_COUNT: usize = GRID * GRID;
pub const CELL_SIZE: i32 = IMAGE_SIZE as i32 / GRID as i32;
pub const MAX_OBJECTS: usize = 3;
pub const MAX_LEN: usize = 16;
pub const QUESTION: &str = "How many targets are pictured here?";

const FIRST_CELL: usize = 5;
const FIRST_DIGIT: usize = FIRST_CELL + CELL_COUNT;
const FILLER_ID: usize = FIRST_DIGIT + 10;
const EOS_ID: usize = FILLER_ID + 1;
pub const VOCAB_SIZE: usize = EOS_ID + 1;
/// Box counts at or above this share a state in [`StateSpace::KPhaseCount`].
const COUNT_CAP: usize = MAX_OBJECTS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ToyToken {
    ThinkOpen,
    ThinkClose,
    RethinkOpen,
    RethinkClose,
    Answer,
    Cell(u8),
    Digit(u8),
    Filler,
    Eos,
}

impl ToyToken {
    pub fn id(self) -> usize {
        match self {
            ToyToken::ThinkOpen => 0,
            ToyToken::ThinkClose => 1,
            ToyToken::RethinkOpen => 2,
            ToyToken::RethinkClose => 3,
            ToyToken::Answer => 4,
            ToyToken::Cell(i) => FIRST_CELL + usize::from(i),
            ToyToken::Digit(d) => FIRST_DIGIT + usize::from(d),
            ToyToken::Filler => FILLER_ID,
            ToyToken::Eos => EOS_ID,
        }
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Some(match id {
            0 => ToyToken::ThinkOpen,
            1 => ToyToken::ThinkClose,
            2 => ToyToken::RethinkOpen,
            3 => ToyToken::RethinkClose,
            4 => ToyToken::Answer,
            i if (FIRST_CELL..FIRST_DIGIT).contains(&i) => ToyToken::Cell((i - FIRST_CELL) as u8),
            i if (FIRST_DIGIT..FILLER_ID).contains(&i) => ToyToken::Digit((i - FIRST_DIGIT) as u8),
            FILLER_ID => ToyToken::Filler,
            EOS_ID => ToyToken::Eos,
            _ => return None,
        })
    }

    /// Text emitted for the token; `None` for EOS.
    pub fn render(self) -> Option<String> {
        Some(match self {
            ToyToken::ThinkOpen => THINK_OPEN.to_string(),
            ToyToken::ThinkClose => THINK_CLOSE.to_string(),
            ToyToken::RethinkOpen => RETHINK_OPEN.to_string(),
            ToyToken::RethinkClose => RETHINK_CLOSE.to_string(),
            ToyToken::Answer => ANSWER_MARKER.to_string(),
            ToyToken::Cell(i) => {
                let b = cell_box(usize::from(i));
                format!("({}, {}, {}, {})", b.x1, b.y1, b.x2, b.y2)
            }
            ToyToken::Digit(d) => d.to_string(),
            ToyToken::Filler => "obj".to_string(),
            ToyToken::Eos => return None,
        })
    }

    pub fn name(self) -> String {
        match self {
            ToyToken::Cell(i) => format!("CELL({i})"),
            ToyToken::Digit(d) => format!("DIGIT({d})"),
            ToyToken::Filler => "FILLER".into(),
            ToyToken::Eos => "EOS".into(),
            other => other.render().unwrap_or_default(),
        }
    }
}

pub fn vocabulary() -> Vec<ToyToken> {
    (0..VOCAB_SIZE).filter_map(ToyToken::from_id).collect()
}

/// Box of the `i`-th grid cell, row-major.
pub fn cell_box(i: usize) -> BoundingBox {
    let (row, col) = ((i / GRID) as i32, (i % GRID) as i32);
    BoundingBox::new(
        col * CELL_SIZE,
        row * CELL_SIZE,
        (col + 1) * CELL_SIZE,
        (row + 1) * CELL_SIZE,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateSpace {
    /// `(k, position)`.
    KPosition,
    /// `(k, tag phase, CELL tokens emitted so far capped at 4)`.
    #[default]
    KPhaseCount,
}

/// Where the prefix sits in the `<think>…</think><rethink>…</rethink><answer>`
/// grammar. Out-of-order tags fall into `Broken`, which only `<answer>` leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Start,
    InThink,
    AfterThink,
    InRethink,
    AfterRethink,
    Answer,
    Answered,
    Broken,
}

impl Phase {
    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self, token: ToyToken) -> Phase {
        use Phase::*;
        use ToyToken as T;
        match (self, token) {
            (Answer, _) => Answered,
            (Answered, _) => Answered,
            (_, T::Answer) => Answer,
            (Start, T::ThinkOpen) => InThink,
            (InThink, T::ThinkClose) => AfterThink,
            (AfterThink, T::RethinkOpen) => InRethink,
            (InRethink, T::RethinkClose) => AfterRethink,
            (_, T::ThinkOpen | T::ThinkClose | T::RethinkOpen | T::RethinkClose) => Broken,
            (phase, _) => phase,
        }
    }
}

impl StateSpace {
    pub fn state_count(self) -> usize {
        match self {
            StateSpace::KPosition => (MAX_OBJECTS + 1) * MAX_LEN,
            StateSpace::KPhaseCount => (MAX_OBJECTS + 1) * Phase::COUNT * (COUNT_CAP + 1),
        }
    }
}

/// Incremental state tracker for one rollout.
#[derive(Debug, Clone, Copy)]
pub struct StateCursor {
    space: StateSpace,
    k: usize,
    position: usize,
    phase: Phase,
    cells: usize,
}

impl StateCursor {
    pub fn new(space: StateSpace, k: usize) -> Self {
        Self {
            space,
            k,
            position: 0,
            phase: Phase::Start,
            cells: 0,
        }
    }

    pub fn index(&self) -> usize {
        match self.space {
            StateSpace::KPosition => self.k * MAX_LEN + self.position,
            StateSpace::KPhaseCount => {
                (self.k * Phase::COUNT + self.phase.index()) * (COUNT_CAP + 1)
                    + self.cells.min(COUNT_CAP)
            }
        }
    }

    pub fn advance(&mut self, token: usize) {
        self.position += 1;
        if let Some(t) = ToyToken::from_id(token) {
            self.phase = self.phase.next(t);
            if matches!(t, ToyToken::Cell(_)) {
                self.cells += 1;
            }
        }
    }
}

/// State index of `(k, position)` in [`StateSpace::KPosition`].
pub fn state_index(k: usize, position: usize) -> usize {
    k * MAX_LEN + position
}

/// States visited when emitting `tokens` for a task with `k` objects.
pub fn states_for(space: StateSpace, k: usize, tokens: &[usize]) -> Vec<usize> {
    let mut cursor = StateCursor::new(space, k);
    tokens
        .iter()
        .map(|&t| {
            let s = cursor.index();
            cursor.advance(t);
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTask {
    pub cells: Vec<usize>,
    pub objects: Vec<BoundingBox>,
    pub gt_count: u32,
    pub gt_answer: String,
}

impl ToyTask {
    pub fn with_cells(cells: Vec<usize>) -> Self {
        let objects = cells.iter().map(|&c| cell_box(c)).collect();
        let k = cells.len();
        Self {
            cells,
            objects,
            gt_count: k as u32,
            gt_answer: k.to_string(),
        }
    }

    pub fn k(&self) -> usize {
        self.gt_count as usize
    }

    pub fn answer_key(&self) -> AnswerKey<'_> {
        AnswerKey {
            question: QUESTION,
            answer: &self.gt_answer,
            gt_count: Some(self.gt_count),
        }
    }
}

pub fn sample_task<R: Rng + ?Sized>(rng: &mut R) -> ToyTask {
    let k = rng.random_range(0..=MAX_OBJECTS);
    let mut cells = sample_indices(rng, CELL_COUNT, k).into_vec();
    cells.sort_unstable();
    ToyTask::with_cells(cells)
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Samples tokens autoregressively until EOS or `max_len` tokens.
pub fn rollout<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    space: StateSpace,
    task: &ToyTask,
    rng: &mut R,
    max_len: usize,
) -> Completion {
    generate(policy, space, task, max_len, |probs| {
        sample_categorical(probs, rng)
    })
}

pub fn greedy_rollout(
    policy: &TabularPolicy,
    space: StateSpace,
    task: &ToyTask,
    max_len: usize,
) -> Completion {
    generate(policy, space, task, max_len, |probs| {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        best
    })
}

fn generate(
    policy: &TabularPolicy,
    space: StateSpace,
    task: &ToyTask,
    max_len: usize,
    mut pick: impl FnMut(&[f64]) -> usize,
) -> Completion {
    let mut c = Completion::default();
    let mut cursor = StateCursor::new(space, task.k());
    for _ in 0..max_len.min(MAX_LEN) {
        let state = cursor.index();
        let tok = pick(&policy.probs(state));
        c.tokens.push(tok);
        c.states.push(state);
        cursor.advance(tok);
        if tok == EOS_ID {
            break;
        }
    }
    c
}

/// Renders tokens joined by single spaces; EOS renders nothing.
pub fn detokenize(tokens: &[usize]) -> String {
    tokens
        .iter()
        .filter_map(|&t| ToyToken::from_id(t).and_then(ToyToken::render))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Builds the trace straight from tokens, without scanning the text.
pub fn trace_from_tokens(tokens: &[usize]) -> GroundedTrace {
    let mut text = String::new();
    let mut boxes = Vec::new();
    // (token, byte start, byte end) for every rendered token.
    let mut placed: Vec<(ToyToken, usize, usize)> = Vec::new();
    for tok in tokens.iter().filter_map(|&t| ToyToken::from_id(t)) {
        let Some(rendered) = tok.render() else {
            continue;
        };
        if !text.is_empty() {
            text.push(' ');
        }
        let start = text.len();
        text.push_str(&rendered);
        let end = text.len();
        if let ToyToken::Cell(i) = tok {
            boxes.push(BoxMatch {
                bbox: cell_box(usize::from(i)),
                span: start..end,
            });
        }
        placed.push((tok, start, end));
    }

    let positions = |want: ToyToken| -> Vec<(usize, usize)> {
        placed
            .iter()
            .filter(|(t, _, _)| *t == want)
            .map(|&(_, s, e)| (s, e))
            .collect()
    };
    let pair = |open: ToyToken, close: ToyToken| {
        let (o, c) = (positions(open), positions(close));
        (o.len() == 1 && c.len() == 1 && o[0].0 < c[0].0).then(|| (o[0], c[0]))
    };
    let think = pair(ToyToken::ThinkOpen, ToyToken::ThinkClose);
    let rethink = pair(ToyToken::RethinkOpen, ToyToken::RethinkClose);
    let answers = positions(ToyToken::Answer);

    let segment = |open: ToyToken, close: ToyToken| {
        let (_, open_end) = *positions(open).first()?;
        let (close_start, _) = positions(close).into_iter().find(|&(s, _)| s >= open_end)?;
        Some(text[open_end..close_start].trim().to_string())
    };

    GroundedTrace {
        think_segment: segment(ToyToken::ThinkOpen, ToyToken::ThinkClose),
        rethink_segment: segment(ToyToken::RethinkOpen, ToyToken::RethinkClose),
        answer_segment: answers.first().map(|&(_, e)| text[e..].trim().to_string()),
        boxes,
        token_report: TokenPairReport {
            think_pair_ok: think.is_some(),
            rethink_pair_ok: rethink.is_some(),
            pairs_ordered_ok: matches!((think, rethink), (Some((_, tc)), Some((ro, _))) if tc.0 < ro.0),
            answer_marker_present: !answers.is_empty(),
        },
        raw_text: text,
    }
}

/// Scores one completion for a task.
pub trait ToyScorer {
    fn score(&self, task: &ToyTask, tokens: &[usize]) -> Result<RewardBreakdown, RewardError>;
}

/// Detokenize → parse → full reward stack with the rule judge.
#[derive(Debug, Clone, Default)]
pub struct RewardEngineScorer {
    pub config: RewardConfig,
}

impl ToyScorer for RewardEngineScorer {
    fn score(&self, task: &ToyTask, tokens: &[usize]) -> Result<RewardBreakdown, RewardError> {
        let trace = crate::trace::parse_trace(&detokenize(tokens));
        total_reward(&trace, &task.answer_key(), &self.config, &RuleJudge)
    }
}

/// Initial logits: zero everywhere except for FILLER, EOS and the CELL tokens.
/// The default makes coordinates and early stopping unlikely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitPrior {
    pub filler_logit: f64,
    pub eos_logit: f64,
    /// Shared by all sixteen CELL tokens.
    pub cell_logit: f64,
}

impl Default for InitPrior {
    fn default() -> Self {
        Self {
            filler_logit: 0.0,
            eos_logit: -2.0,
            cell_logit: -2.0,
        }
    }
}

impl InitPrior {
    pub fn uniform() -> Self {
        Self {
            filler_logit: 0.0,
            eos_logit: 0.0,
            cell_logit: 0.0,
        }
    }

    pub fn policy(&self, space: StateSpace) -> TabularPolicy {
        let states = space.state_count();
        let mut p = TabularPolicy::uniform(states, VOCAB_SIZE);
        for s in 0..states {
            let row = p.row_mut(s);
            row[FILLER_ID] = self.filler_logit;
            row[EOS_ID] = self.eos_logit;
            for l in &mut row[FIRST_CELL..FIRST_DIGIT] {
                *l = self.cell_logit;
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
    pub steps: usize,
    pub seed: u64,
    /// Tasks (groups) per update.
    pub tasks_per_step: usize,
    pub max_len: usize,
    /// Steps between refreshes of the sampling snapshot; 1 is on-policy.
    pub old_refresh_interval: usize,
    pub init: InitPrior,
    pub state_space: StateSpace,
    pub optimizer: Optimizer,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            grpo: GrpoConfig {
                learning_rate: 0.02,
                beta: 0.0,
                ..GrpoConfig::default()
            },
            reward: RewardConfig::default(),
            steps: 2000,
            seed: 0,
            tasks_per_step: 64,
            max_len: MAX_LEN,
            old_refresh_interval: 1,
            init: InitPrior::default(),
            state_space: StateSpace::default(),
            optimizer: Optimizer::adam(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mean_r_format: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_r_count: Option<f64>,
    pub mean_r_ans: f64,
    pub mean_total: f64,
    pub objective: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub seed: u64,
    pub config: ToyTrainConfig,
    pub records: Vec<StepRecord>,
}

impl TrainingLog {
    /// Mean of `field` over the last `window` records.
    pub fn tail_mean(&self, window: usize, field: impl Fn(&StepRecord) -> f64) -> Option<f64> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let tail = &self.records[n.saturating_sub(window)..];
        Some(tail.iter().map(field).sum::<f64>() / tail.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    pub policy: TabularPolicy,
}

pub fn train(config: &ToyTrainConfig) -> Result<TrainOutcome, TrainError> {
    let scorer = RewardEngineScorer {
        config: config.reward.clone(),
    };
    train_with(config, &scorer)
}

pub fn train_with(
    config: &ToyTrainConfig,
    scorer: &dyn ToyScorer,
) -> Result<TrainOutcome, TrainError> {
    config.grpo.validate()?;
    if config.tasks_per_step == 0 || config.old_refresh_interval == 0 {
        return Err(TrainError::Config(
            "tasks_per_step and old_refresh_interval must be ≥ 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let space = config.state_space;
    let reference = config.init.policy(space);
    let mut policy = reference.clone();
    let mut old = policy.clone();
    let mut optimizer = OptimizerState::new(config.optimizer, policy.shape());
    let mut records = Vec::with_capacity(config.steps);
    let n = config.grpo.group_size;
    let batch = config.tasks_per_step as f64;

    for step in 0..config.steps {
        if step % config.old_refresh_interval == 0 {
            old = policy.clone();
        }
        let mut grad = LogitGradient::zeros(space.state_count(), VOCAB_SIZE);
        let (mut fmt, mut count, mut ans, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut counted = 0usize;
        let (mut objective, mut kl) = (0.0, 0.0);
        for t in 0..config.tasks_per_step {
            let task = sample_task(&mut rng);
            let completions: Vec<Completion> = (0..n)
                .map(|_| rollout(&old, space, &task, &mut rng, config.max_len))
                .collect();
            let mut rewards = Vec::with_capacity(n);
            for c in &completions {
                let b = scorer.score(&task, &c.tokens)?;
                fmt += b.r_format;
                ans += b.r_ans;
                total += b.total;
                if let Some(rc) = b.r_count {
                    count += rc;
                    counted += 1;
                }
                rewards.push(b.total);
            }
            let group = CompletionGroup::new(
                format!("step{step}-task{t}"),
                completions,
                rewards,
                config.grpo.delta,
                config.grpo.std_kind,
            )?;
            objective += grpo_objective(&group, &policy, &old, &reference, &config.grpo)?;
            kl += kl_categorical(&policy, &reference, &group.visited_states())?;
            let g = grpo_gradient(&group, &policy, &old, &reference, &config.grpo)?;
            grad.add_scaled(&g, 1.0 / batch)?;
        }
        policy = optimizer.apply(&policy, &grad, config.grpo.learning_rate)?;
        let m = batch * n as f64;
        records.push(StepRecord {
            step,
            mean_r_format: fmt / m,
            mean_r_count: (counted > 0).then(|| count / counted as f64),
            mean_r_ans: ans / m,
            mean_total: total / m,
            objective: objective / batch,
            kl: kl / batch,
        });
    }

    Ok(TrainOutcome {
        log: TrainingLog {
            seed: config.seed,
            config: config.clone(),
            records,
        },
        policy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyEvaluation {
    pub tasks: usize,
    pub mean_r_format: f64,
    /// Fraction of tasks whose answer the rule judge accepts.
    pub accuracy: f64,
    /// Mean `|boxes − k|`.
    pub mean_count_error: f64,
    pub mean_total: f64,
}

/// Held-out evaluation over `tasks` fresh tasks drawn from `seed`.
pub fn evaluate(
    policy: &TabularPolicy,
    space: StateSpace,
    reward: &RewardConfig,
    tasks: usize,
    seed: u64,
    greedy: bool,
) -> Result<ToyEvaluation, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scorer = RewardEngineScorer {
        config: reward.clone(),
    };
    let (mut fmt, mut acc, mut err, mut total) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..tasks {
        let task = sample_task(&mut rng);
        let c = if greedy {
            greedy_rollout(policy, space, &task, MAX_LEN)
        } else {
            rollout(policy, space, &task, &mut rng, MAX_LEN)
        };
        let trace = crate::trace::parse_trace(&detokenize(&c.tokens));
        let b = scorer.score(&task, &c.tokens)?;
        fmt += b.r_format;
        total += b.total;
        acc += f64::from(rule_judge(
            QUESTION,
            trace.answer_or_empty(),
            &task.gt_answer,
        ));
        err += (trace.box_count() as f64 - task.k() as f64).abs();
    }
    let n = tasks.max(1) as f64;
    Ok(ToyEvaluation {
        tasks,
        mean_r_format: fmt / n,
        accuracy: acc / n,
        mean_count_error: err / n,
        mean_total: total / n,
    })
}

/// Tokens of the ideal trace for `k` objects placed on `cells`.
pub fn ideal_tokens(cells: &[usize]) -> Vec<usize> {
    let mut t = vec![ToyToken::ThinkOpen.id()];
    t.extend(cells.iter().map(|&c| ToyToken::Cell(c as u8).id()));
    t.extend([
        ToyToken::ThinkClose.id(),
        ToyToken::RethinkOpen.id(),
        ToyToken::RethinkClose.id(),
        ToyToken::Answer.id(),
        ToyToken::Digit(cells.len() as u8).id(),
        ToyToken::Eos.id(),
    ]);
    t
}

pub const POLICY_FORMAT: &str = "grit-tabular-policy";
pub const POLICY_VERSION: u32 = 1;

/// On-disk policy: logits stored as IEEE-754 bit patterns (hex) so the file
/// round-trips exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format: String,
    pub version: u32,
    pub state_count: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub vocabulary: Vec<String>,
    pub seed: u64,
    pub config: ToyTrainConfig,
    pub logits_hex: Vec<String>,
}

impl PolicyFile {
    pub fn new(policy: &TabularPolicy, config: &ToyTrainConfig) -> Self {
        Self {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            state_count: policy.state_count(),
            vocab_size: policy.vocab_size(),
            max_len: MAX_LEN,
            vocabulary: vocabulary().into_iter().map(ToyToken::name).collect(),
            seed: config.seed,
            config: config.clone(),
            logits_hex: policy
                .logits()
                .iter()
                .map(|l| format!("{:016x}", l.to_bits()))
                .collect(),
        }
    }

    pub fn to_policy(&self) -> Result<TabularPolicy, String> {
        if self.format != POLICY_FORMAT || self.version != POLICY_VERSION {
            return Err(format!(
                "unsupported policy file {} v{}",
                self.format, self.version
            ));
        }
        let logits = self
            .logits_hex
            .iter()
            .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        TabularPolicy::from_logits(self.state_count, self.vocab_size, logits)
            .map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_trace;

    #[test]
    fn vocabulary_layout() {
        let v = vocabulary();
        assert_eq!(v.len(), VOCAB_SIZE);
        assert_eq!(VOCAB_SIZE, 33);
        for (i, t) in v.iter().enumerate() {
            assert_eq!(t.id(), i);
        }
        assert_eq!(ToyToken::from_id(VOCAB_SIZE), None);
    }

    #[test]
    fn cells_are_625_px() {
        for i in 0..CELL_COUNT {
            let b = cell_box(i);
            assert_eq!(b.area(), 625);
            assert!(b.x2 <= IMAGE_SIZE as i32 && b.y2 <= IMAGE_SIZE as i32);
        }
        assert_eq!(cell_box(0).as_array(), [0, 0, 25, 25]);
        assert_eq!(cell_box(15).as_array(), [75, 75, 100, 100]);
    }

    #[test]
    fn detokenize_examples() {
        use ToyToken::*;
        let toks: Vec<usize> = [
            ThinkOpen,
            Cell(0),
            ThinkClose,
            RethinkOpen,
            RethinkClose,
            Answer,
            Digit(1),
        ]
        .iter()
        .map(|t| t.id())
        .collect();
        let text = detokenize(&toks);
        assert_eq!(
            text,
            "<think> (0, 0, 25, 25) </think> <rethink> </rethink> <answer> 1"
        );
        let trace = parse_trace(&text);
        assert_eq!(trace.box_count(), 1);
        assert_eq!(trace.answer_segment.as_deref(), Some("1"));
        assert_eq!(detokenize(&[]), "");
        assert_eq!(detokenize(&[Digit(7).id()]), "7");
    }

    #[test]
    fn ideal_trace_scores_maximum() {
        let task = ToyTask::with_cells(vec![2, 9]);
        let b = RewardEngineScorer::default()
            .score(&task, &ideal_tokens(&task.cells))
            .unwrap();
        assert_eq!(b.r_format, 1.5);
        assert_eq!(b.r_count, Some(0.5));
        assert!((b.total - 3.1).abs() < 1e-12);
    }

    #[test]
    fn task_sampling_is_deterministic() {
        let a = sample_task(&mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_task(&mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert_eq!(a.objects.len(), a.k());
        let t0 = ToyTask::with_cells(vec![]);
        assert_eq!(t0.gt_answer, "0");
        assert!(t0.objects.is_empty());
    }

    #[test]
    fn rollout_respects_max_len() {
        for space in [StateSpace::KPosition, StateSpace::KPhaseCount] {
            let p = InitPrior::uniform().policy(space);
            let task = ToyTask::with_cells(vec![1]);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..200 {
                let c = rollout(&p, space, &task, &mut rng, MAX_LEN);
                assert!(c.tokens.len() <= MAX_LEN);
                assert_eq!(c.states, states_for(space, 1, &c.tokens));
            }
            let short = rollout(&p, space, &task, &mut rng, 3);
            assert!(short.tokens.len() <= 3);
        }
    }

    #[test]
    fn greedy_rollouts_repeat() {
        let space = StateSpace::KPosition;
        let mut p = InitPrior::uniform().policy(space);
        p.row_mut(state_index(1, 0))[ToyToken::ThinkOpen.id()] = 5.0;
        let task = ToyTask::with_cells(vec![4]);
        let a = greedy_rollout(&p, space, &task, MAX_LEN);
        let b = greedy_rollout(&p, space, &task, MAX_LEN);
        assert_eq!(a, b);
        assert_eq!(a.tokens[0], ToyToken::ThinkOpen.id());
    }

    #[test]
    fn state_indices_are_in_range_and_distinct() {
        for space in [StateSpace::KPosition, StateSpace::KPhaseCount] {
            let mut seen = std::collections::HashSet::new();
            for k in 0..=MAX_OBJECTS {
                let toks = ideal_tokens(&(0..k).collect::<Vec<_>>());
                for s in states_for(space, k, &toks) {
                    assert!(s < space.state_count());
                    seen.insert((k, s));
                }
            }
            // The ideal scripts never revisit a state.
            let total: usize = (0..=MAX_OBJECTS).map(|k| 7 + k).sum();
            assert_eq!(seen.len(), total);
        }
    }

    #[test]
    fn zero_steps_returns_initial_policy() {
        let cfg = ToyTrainConfig {
            steps: 0,
            ..Default::default()
        };
        let out = train(&cfg).unwrap();
        assert!(out.log.records.is_empty());
        assert_eq!(out.policy, cfg.init.policy(cfg.state_space));
    }

    #[test]
    fn policy_file_round_trip_is_exact() {
        let cfg = ToyTrainConfig {
            steps: 3,
            ..Default::default()
        };
        let out = train(&cfg).unwrap();
        let file = PolicyFile::new(&out.policy, &cfg);
        let json = serde_json::to_string(&file).unwrap();
        let back: PolicyFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_policy().unwrap(), out.policy);
    }
}
