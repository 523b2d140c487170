//! Group-relative advantages and the clipped, KL-penalised GRPO objective for
//! a tabular softmax policy, with its exact gradient.
//!
//! The policy is a `state × token` logit table. A completion is a token
//! sequence paired with the state each token was emitted from, so
//! `log π(o | q) = Σ_t log softmax(θ[s_t])[o_t]`.
//!
//! Gradient of one group's objective with respect to `θ[s, v]`:
//!
//! ```text
//! surrogate_i: A_i · ρ_i · Σ_t [s_t = s] (1[v = o_t] − π(v|s))   when the min
//!              picks the unclipped branch, 0 otherwise
//! KL:          Σ_s (c_s / M) · π(v|s) (log π(v|s) − log π_ref(v|s) − KL_s)
//! ```
//!
//! where `c_s` is how often `s` was visited and `M` the total visit count.

use serde::{Deserialize, Serialize};

pub const DEFAULT_EPSILON: f64 = 0.2;
pub const DEFAULT_BETA: f64 = 0.04;
pub const DEFAULT_DELTA: f64 = 1e-8;
pub const DEFAULT_GROUP_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("a group needs at least 2 completions, got {0}")]
    GroupTooSmall(usize),
    #[error("rewards ({rewards}) and completions ({completions}) differ in length")]
    GroupLength { rewards: usize, completions: usize },
    #[error("token and state sequences differ in length ({tokens} vs {states})")]
    SequenceLength { tokens: usize, states: usize },
    #[error("state {state} out of range for a table with {state_count} states")]
    StateOutOfRange { state: usize, state_count: usize },
    #[error("token {token} out of range for a vocabulary of {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },
    #[error("table shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N − 1.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub delta: f64,
    pub group_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub std_kind: StdKind,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            beta: DEFAULT_BETA,
            delta: DEFAULT_DELTA,
            group_size: DEFAULT_GROUP_SIZE,
            learning_rate: 0.5,
            std_kind: StdKind::Population,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(GrpoError::Config(format!(
                "epsilon {} not in (0, 1)",
                self.epsilon
            )));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(GrpoError::Config(format!("beta {} must be ≥ 0", self.beta)));
        }
        if self.group_size < 2 {
            return Err(GrpoError::Config(format!(
                "group_size {} < 2",
                self.group_size
            )));
        }
        if self.delta.is_nan() || self.delta < 0.0 || !self.learning_rate.is_finite() {
            return Err(GrpoError::Config(
                "delta and learning_rate must be finite, delta ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

/// `A_i = (r_i − mean) / (std + δ)`; a constant group yields exact zeros.
pub fn group_advantages_with(
    rewards: &[f64],
    delta: f64,
    kind: StdKind,
) -> Result<Vec<f64>, GrpoError> {
    let n = rewards.len();
    if n < 2 {
        return Err(GrpoError::GroupTooSmall(n));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; n]);
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let ss: f64 = rewards.iter().map(|r| (r - mean).powi(2)).sum();
    let denom = match kind {
        StdKind::Population => n as f64,
        StdKind::Sample => (n - 1) as f64,
    };
    let std = (ss / denom).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + delta)).collect())
}

pub fn group_advantages(rewards: &[f64], delta: f64) -> Result<Vec<f64>, GrpoError> {
    group_advantages_with(rewards, delta, StdKind::Population)
}

/// A sampled completion and the states its tokens were emitted from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Completion {
    pub tokens: Vec<usize>,
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionGroup {
    pub sample_id: String,
    pub completions: Vec<Completion>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub delta: f64,
}

impl CompletionGroup {
    pub fn new(
        sample_id: impl Into<String>,
        completions: Vec<Completion>,
        rewards: Vec<f64>,
        delta: f64,
        kind: StdKind,
    ) -> Result<Self, GrpoError> {
        if rewards.len() != completions.len() {
            return Err(GrpoError::GroupLength {
                rewards: rewards.len(),
                completions: completions.len(),
            });
        }
        let advantages = group_advantages_with(&rewards, delta, kind)?;
        Ok(Self {
            sample_id: sample_id.into(),
            completions,
            rewards,
            advantages,
            delta,
        })
    }

    pub fn n(&self) -> usize {
        self.completions.len()
    }

    /// Every state visited by the group, with multiplicity.
    pub fn visited_states(&self) -> Vec<usize> {
        self.completions
            .iter()
            .flat_map(|c| c.states.iter().copied())
            .collect()
    }
}

/// `state × token` logit table with a softmax over tokens at each state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    state_count: usize,
    vocab_size: usize,
    logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(state_count: usize, vocab_size: usize) -> Self {
        Self {
            state_count,
            vocab_size,
            logits: vec![0.0; state_count * vocab_size],
        }
    }

    pub fn from_logits(
        state_count: usize,
        vocab_size: usize,
        logits: Vec<f64>,
    ) -> Result<Self, GrpoError> {
        if logits.len() != state_count * vocab_size {
            return Err(GrpoError::ShapeMismatch(
                (state_count, vocab_size),
                (logits.len(), 1),
            ));
        }
        Ok(Self {
            state_count,
            vocab_size,
            logits,
        })
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.state_count, self.vocab_size)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.logits[state * self.vocab_size..(state + 1) * self.vocab_size]
    }

    pub fn row_mut(&mut self, state: usize) -> &mut [f64] {
        let v = self.vocab_size;
        &mut self.logits[state * v..(state + 1) * v]
    }

    fn check_state(&self, state: usize) -> Result<(), GrpoError> {
        if state >= self.state_count {
            return Err(GrpoError::StateOutOfRange {
                state,
                state_count: self.state_count,
            });
        }
        Ok(())
    }

    fn check_token(&self, token: usize) -> Result<(), GrpoError> {
        if token >= self.vocab_size {
            return Err(GrpoError::TokenOutOfRange {
                token,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }

    pub fn log_probs(&self, state: usize) -> Vec<f64> {
        let row = self.row(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row.iter().map(|l| l - lse).collect()
    }

    pub fn probs(&self, state: usize) -> Vec<f64> {
        let row = self.row(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn argmax(&self, state: usize) -> usize {
        let row = self.row(state);
        let mut best = 0;
        for (i, &l) in row.iter().enumerate() {
            if l > row[best] {
                best = i;
            }
        }
        best
    }
}

fn check_shapes(a: &TabularPolicy, b: &TabularPolicy) -> Result<(), GrpoError> {
    if a.shape() != b.shape() {
        return Err(GrpoError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

pub fn sequence_logprob(policy: &TabularPolicy, completion: &Completion) -> Result<f64, GrpoError> {
    if completion.tokens.len() != completion.states.len() {
        return Err(GrpoError::SequenceLength {
            tokens: completion.tokens.len(),
            states: completion.states.len(),
        });
    }
    let mut total = 0.0;
    for (&tok, &state) in completion.tokens.iter().zip(&completion.states) {
        policy.check_state(state)?;
        policy.check_token(tok)?;
        total += policy.log_probs(state)[tok];
    }
    Ok(total)
}

pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// `min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped.min(clipped)
}

/// Whether the unclipped branch carries the gradient (ties count as unclipped).
fn unclipped_active(ratio: f64, advantage: f64, epsilon: f64) -> bool {
    let unclipped = ratio * advantage;
    let clipped = clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped <= clipped
}

fn kl_row(p_log: &[f64], q_log: &[f64]) -> f64 {
    p_log
        .iter()
        .zip(q_log)
        .map(|(&lp, &lq)| lp.exp() * (lp - lq))
        .sum::<f64>()
        .max(0.0)
}

/// Mean exact categorical `KL(π(·|s) ‖ π_ref(·|s))` over a multiset of states.
pub fn kl_categorical(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    visited_states: &[usize],
) -> Result<f64, GrpoError> {
    check_shapes(policy, reference)?;
    if visited_states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &s in visited_states {
        policy.check_state(s)?;
        total += kl_row(&policy.log_probs(s), &reference.log_probs(s));
    }
    Ok(total / visited_states.len() as f64)
}

/// Importance ratios `π_θ(o_i) / π_old(o_i)` at sequence level.
pub fn importance_ratios(
    group: &CompletionGroup,
    policy: &TabularPolicy,
    old: &TabularPolicy,
) -> Result<Vec<f64>, GrpoError> {
    check_shapes(policy, old)?;
    group
        .completions
        .iter()
        .map(|c| Ok((sequence_logprob(policy, c)? - sequence_logprob(old, c)?).exp()))
        .collect()
}

fn check_group(group: &CompletionGroup) -> Result<(), GrpoError> {
    if group.n() < 2 {
        return Err(GrpoError::GroupTooSmall(group.n()));
    }
    if group.advantages.len() != group.n() {
        return Err(GrpoError::GroupLength {
            rewards: group.advantages.len(),
            completions: group.n(),
        });
    }
    Ok(())
}

pub fn grpo_objective(
    group: &CompletionGroup,
    policy: &TabularPolicy,
    old: &TabularPolicy,
    reference: &TabularPolicy,
    config: &GrpoConfig,
) -> Result<f64, GrpoError> {
    check_group(group)?;
    let ratios = importance_ratios(group, policy, old)?;
    let surrogate: f64 = ratios
        .iter()
        .zip(&group.advantages)
        .map(|(&r, &a)| clipped_surrogate(r, a, config.epsilon))
        .sum::<f64>()
        / group.n() as f64;
    let kl = if config.beta == 0.0 {
        0.0
    } else {
        kl_categorical(policy, reference, &group.visited_states())?
    };
    Ok(surrogate - config.beta * kl)
}

/// Gradient table with the same layout as [`TabularPolicy`] logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradient {
    pub state_count: usize,
    pub vocab_size: usize,
    pub values: Vec<f64>,
}

impl LogitGradient {
    pub fn zeros(state_count: usize, vocab_size: usize) -> Self {
        Self {
            state_count,
            vocab_size,
            values: vec![0.0; state_count * vocab_size],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.state_count, self.vocab_size)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &LogitGradient, scale: f64) -> Result<(), GrpoError> {
        if self.shape() != other.shape() {
            return Err(GrpoError::ShapeMismatch(self.shape(), other.shape()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }
}

/// Exact gradient of [`grpo_objective`] with respect to every logit of
/// `policy`. Summation order is fixed for reproducibility.
pub fn grpo_gradient(
    group: &CompletionGroup,
    policy: &TabularPolicy,
    old: &TabularPolicy,
    reference: &TabularPolicy,
    config: &GrpoConfig,
) -> Result<LogitGradient, GrpoError> {
    check_group(group)?;
    check_shapes(policy, reference)?;
    let (states, vocab) = policy.shape();
    let mut grad = LogitGradient::zeros(states, vocab);
    let ratios = importance_ratios(group, policy, old)?;
    let n = group.n() as f64;

    for ((c, &ratio), &adv) in group.completions.iter().zip(&ratios).zip(&group.advantages) {
        if adv == 0.0 || !unclipped_active(ratio, adv, config.epsilon) {
            continue;
        }
        let weight = adv * ratio / n;
        for (&tok, &s) in c.tokens.iter().zip(&c.states) {
            let probs = policy.probs(s);
            let row = &mut grad.values[s * vocab..(s + 1) * vocab];
            for (g, p) in row.iter_mut().zip(&probs) {
                *g -= weight * p;
            }
            row[tok] += weight;
        }
    }

    if config.beta != 0.0 {
        let visited = group.visited_states();
        let m = visited.len() as f64;
        let mut counts = vec![0usize; states];
        for &s in &visited {
            counts[s] += 1;
        }
        for (s, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let lp = policy.log_probs(s);
            let lq = reference.log_probs(s);
            let kl = kl_row(&lp, &lq);
            let w = config.beta * count as f64 / m;
            let row = &mut grad.values[s * vocab..(s + 1) * vocab];
            for v in 0..vocab {
                let p = lp[v].exp();
                row[v] -= w * p * (lp[v] - lq[v] - kl);
            }
        }
    }
    Ok(grad)
}

/// Gradient ascent step: `θ ← θ + lr · ∇`.
pub fn apply_update(
    policy: &TabularPolicy,
    gradient: &LogitGradient,
    learning_rate: f64,
) -> Result<TabularPolicy, GrpoError> {
    if policy.shape() != gradient.shape() {
        return Err(GrpoError::ShapeMismatch(policy.shape(), gradient.shape()));
    }
    let mut next = policy.clone();
    for (l, g) in next.logits.iter_mut().zip(&gradient.values) {
        *l += learning_rate * g;
    }
    Ok(next)
}

/// Update rule used by the toy trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    /// `θ ← θ + lr · ∇`.
    GradientAscent,
    /// Adam without weight decay, ascending.
    Adam {
        #[serde(default = "adam_beta1")]
        beta1: f64,
        #[serde(default = "adam_beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn adam_beta1() -> f64 {
    0.9
}

fn adam_beta2() -> f64 {
    0.999
}

fn adam_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: adam_beta1(),
            beta2: adam_beta2(),
            eps: adam_eps(),
        }
    }
}

/// Optimizer state carried across steps.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    optimizer: Optimizer,
    step: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, shape: (usize, usize)) -> Self {
        let len = match optimizer {
            Optimizer::GradientAscent => 0,
            Optimizer::Adam { .. } => shape.0 * shape.1,
        };
        Self {
            optimizer,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn apply(
        &mut self,
        policy: &TabularPolicy,
        gradient: &LogitGradient,
        learning_rate: f64,
    ) -> Result<TabularPolicy, GrpoError> {
        let Optimizer::Adam { beta1, beta2, eps } = self.optimizer else {
            return apply_update(policy, gradient, learning_rate);
        };
        if policy.shape() != gradient.shape() {
            return Err(GrpoError::ShapeMismatch(policy.shape(), gradient.shape()));
        }
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let mut next = policy.clone();
        for (i, (l, &g)) in next.logits.iter_mut().zip(&gradient.values).enumerate() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *l += learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(next)
    }
}
