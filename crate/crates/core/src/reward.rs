//! Rewards, group-normalized advantages and the two training objectives.
//!
//! Everything here is a pure function of trajectories and caller-supplied
//! log-probabilities; nothing computes gradients.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{normalize_answer, NormalizedAnswer};
use crate::backend::{generate_with_retry, GenerateRequest, Message, ModelBackend};
use crate::rollout::{GoldAnswer, GroupRollout, QuestionKind};
use crate::trajectory::{
    compute_loss_mask, validate_format_with, FormatLimits, LossMask, Tokenizer, TokenSpanMap,
    Trajectory, TrajectoryError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("turn penalty needs N_i > N_bar, got N_i = {n_i} and N_bar = {n_bar}")]
    NotOverBudget { n_i: u32, n_bar: f64 },
    #[error("a successful verdict needs a mean successful turn count")]
    MissingMeanTurns,
    #[error("advantages need at least two rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid reward config: {0}")]
    Config(String),
    #[error(transparent)]
    Mask(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Penalty strength.
    pub lambda: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub clip_epsilon: f64,
    pub std_floor: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { lambda: 0.5, omega_min: 0.1, omega_max: 1.0, clip_epsilon: 0.2, std_floor: 1e-6 }
    }
}

impl RewardConfig {
    // Negated comparisons so NaN fails validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.lambda >= 0.0) {
            return Err(RewardError::Config("lambda must be nonnegative".into()));
        }
        if !(self.omega_min <= self.omega_max) {
            return Err(RewardError::Config("omega_min must not exceed omega_max".into()));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(RewardError::Config("clip_epsilon must lie in (0, 1)".into()));
        }
        if !(self.std_floor > 0.0) {
            return Err(RewardError::Config("std_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Format validity, answer accuracy, turn-budget check and turn count of
/// one rollout. `within_budget` only matters when the first two hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(rename = "F")]
    pub format_ok: bool,
    #[serde(rename = "A")]
    pub accurate: bool,
    #[serde(rename = "T")]
    pub within_budget: bool,
    #[serde(rename = "N_i")]
    pub turns: u32,
}

impl Verdict {
    pub fn succeeded(&self) -> bool {
        self.format_ok && self.accurate
    }
}

pub const JUDGE_PROMPT: &str = "Decide whether a predicted answer to a medical question is equivalent to the reference answer. Minor wording, synonyms and formatting differences count as equivalent; a different entity, value or conclusion does not.

Question: {question}
Reference answer: {gold}
Predicted answer: {pred}

Reply with exactly one word: yes or no.";

/// Whether `pred` answers `gold`. Multiple-choice questions compare letters;
/// open-ended ones compare normalized text.
pub fn check_answer(pred: &NormalizedAnswer, gold: &GoldAnswer) -> bool {
    let g = normalize_answer(&gold.value);
    match gold.kind {
        QuestionKind::MultipleChoice => match (pred.letter, g.letter) {
            (Some(p), Some(g)) => p == g,
            _ => false,
        },
        QuestionKind::OpenEnded => pred.text == g.text,
    }
}

/// [`check_answer`], falling back to a judge model for open-ended
/// questions when the texts differ. A judge that fails or replies with
/// anything but yes counts as a mismatch.
pub fn check_answer_judged(
    question: &str,
    pred_raw: &str,
    gold: &GoldAnswer,
    judge: Option<&dyn ModelBackend>,
) -> bool {
    let pred = normalize_answer(pred_raw);
    if check_answer(&pred, gold) {
        return true;
    }
    let (Some(judge), QuestionKind::OpenEnded) = (judge, gold.kind) else {
        return false;
    };
    let prompt = JUDGE_PROMPT
        .replace("{question}", question)
        .replace("{gold}", &gold.value)
        .replace("{pred}", pred_raw);
    let messages = [Message::user(prompt)];
    match generate_with_retry(judge, &GenerateRequest::new(&messages), 2) {
        Ok(reply) => reply.trim().trim_end_matches('.').eq_ignore_ascii_case("yes"),
        Err(e) => {
            log::warn!("answer judge failed: {e}");
            false
        }
    }
}

/// Mean turn count over successful rollouts, if any.
pub fn mean_successful_turns(verdicts: &[Verdict]) -> Option<f64> {
    let ok: Vec<f64> = verdicts.iter().filter(|v| v.succeeded()).map(|v| v.turns as f64).collect();
    (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
}

/// Fraction of successful rollouts.
pub fn group_accuracy(verdicts: &[Verdict]) -> f64 {
    if verdicts.is_empty() {
        return 0.0;
    }
    verdicts.iter().filter(|v| v.succeeded()).count() as f64 / verdicts.len() as f64
}

/// Penalty weight: harder groups (lower accuracy) get a smaller ω.
pub fn difficulty_omega(accuracy: f64, cfg: &RewardConfig) -> f64 {
    cfg.omega_min + (cfg.omega_max - cfg.omega_min) * accuracy.clamp(0.0, 1.0)
}

/// ω · ln(1 + (N_i − N̄)) for a rollout over the turn budget.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn turn_penalty(n_i: u32, n_bar: f64, omega: f64) -> Result<f64, RewardError> {
    let excess = n_i as f64 - n_bar;
    if !(excess > 0.0) {
        return Err(RewardError::NotOverBudget { n_i, n_bar });
    }
    Ok(omega * excess.ln_1p())
}

/// Piecewise reward in [0, 1]. `verdict.within_budget` is taken as given.
pub fn compute_reward(
    verdict: &Verdict,
    n_bar: Option<f64>,
    omega: f64,
    cfg: &RewardConfig,
) -> Result<f64, RewardError> {
    if !verdict.succeeded() {
        return Ok(0.0);
    }
    if verdict.within_budget {
        return Ok(1.0);
    }
    let n_bar = n_bar.ok_or(RewardError::MissingMeanTurns)?;
    let penalty = turn_penalty(verdict.turns, n_bar, omega)?;
    Ok((1.0 - cfg.lambda * penalty).clamp(0.0, 1.0))
}

/// (r − mean) / (population std + floor).
pub fn normalize_advantages(rewards: &[f64], cfg: &RewardConfig) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    // Exact check: a rounded mean would leave ~1e-10 residue on ties.
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + cfg.std_floor;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Per-token log-probabilities of one trajectory under the current and
/// the sampling policy, with its loss mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyLogProbs {
    pub new: Vec<f64>,
    pub old: Vec<f64>,
    pub mask: LossMask,
}

impl PolicyLogProbs {
    fn check(&self) -> Result<(), RewardError> {
        if self.new.len() != self.mask.len() || self.old.len() != self.mask.len() {
            return Err(RewardError::LengthMismatch(format!(
                "new {}, old {}, mask {}",
                self.new.len(),
                self.old.len(),
                self.mask.len()
            )));
        }
        Ok(())
    }
}

/// Supervised loss −Σ M_t · log π(a_t); the old log-probs are ignored.
pub fn masked_objective(lp: &PolicyLogProbs) -> Result<f64, RewardError> {
    if lp.new.len() != lp.mask.len() {
        return Err(RewardError::LengthMismatch(format!(
            "logprobs {}, mask {}",
            lp.new.len(),
            lp.mask.len()
        )));
    }
    Ok(-lp
        .new
        .iter()
        .zip(lp.mask.as_slice())
        .filter(|(_, &m)| m == 1)
        .map(|(l, _)| l)
        .sum::<f64>())
}

/// One clipped surrogate term for ratio `rho` and advantage `adv`.
pub fn clipped_term(rho: f64, adv: f64, eps: f64) -> f64 {
    (rho * adv).min(rho.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Clipped surrogate without a KL term: token terms are averaged within
/// each trajectory over its masked-in tokens, then across the group.
/// Trajectories with no masked-in tokens contribute zero.
pub fn grpo_surrogate(
    group: &[PolicyLogProbs],
    advantages: &[f64],
    cfg: &RewardConfig,
) -> Result<f64, RewardError> {
    if group.len() != advantages.len() {
        return Err(RewardError::LengthMismatch(format!(
            "{} trajectories, {} advantages",
            group.len(),
            advantages.len()
        )));
    }
    if group.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (lp, &adv) in group.iter().zip(advantages) {
        lp.check()?;
        let (sum, count) = lp
            .new
            .iter()
            .zip(&lp.old)
            .zip(lp.mask.as_slice())
            .filter(|(_, &m)| m == 1)
            .fold((0.0, 0usize), |(s, c), ((n, o), _)| {
                (s + clipped_term((n - o).exp(), adv, cfg.clip_epsilon), c + 1)
            });
        if count > 0 {
            total += sum / count as f64;
        }
    }
    Ok(total / group.len() as f64)
}

/// Per-rollout line of a reward report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutScore {
    pub rollout_index: usize,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub reward: f64,
    pub advantage: f64,
}

/// Scores of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub question_id: String,
    pub rollouts: Vec<RolloutScore>,
    pub n_bar: Option<f64>,
    pub omega: f64,
    pub accuracy: f64,
    /// False when the group had too few surviving rollouts to normalize.
    pub usable: bool,
}

/// Verdict of one trajectory against `gold`. `n_bar` fills in the budget
/// check; pass `None` on the first pass.
pub fn judge_trajectory(
    traj: &Trajectory,
    gold: &GoldAnswer,
    limits: &FormatLimits,
    tokenizer: &dyn Tokenizer,
    judge: Option<&dyn ModelBackend>,
) -> Verdict {
    let format_ok = validate_format_with(traj, limits, tokenizer).pass;
    let accurate = format_ok
        && traj
            .answer()
            .is_some_and(|a| check_answer_judged(traj.input().unwrap_or(""), a, gold, judge));
    Verdict { format_ok, accurate, within_budget: false, turns: traj.turn_count }
}

/// Fills verdicts, rewards and advantages of `group` and returns its report.
pub fn score_group(
    group: &mut GroupRollout,
    cfg: &RewardConfig,
    limits: &FormatLimits,
    tokenizer: &dyn Tokenizer,
    judge: Option<&dyn ModelBackend>,
) -> Result<RewardReport, RewardError> {
    cfg.validate()?;
    let mut verdicts: Vec<Verdict> = group
        .trajectories
        .iter()
        .map(|t| judge_trajectory(t, &group.gold, limits, tokenizer, judge))
        .collect();
    let n_bar = mean_successful_turns(&verdicts);
    for v in &mut verdicts {
        v.within_budget = n_bar.is_some_and(|nb| v.turns as f64 <= nb);
    }
    let accuracy = group_accuracy(&verdicts);
    let omega = difficulty_omega(accuracy, cfg);
    let rewards = verdicts
        .iter()
        .map(|v| compute_reward(v, n_bar, omega, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let (advantages, usable) = match normalize_advantages(&rewards, cfg) {
        Ok(a) => (a, group.usable),
        Err(RewardError::GroupTooSmall(_)) => (vec![0.0; rewards.len()], false),
        Err(e) => return Err(e),
    };
    let indices = if group.rollout_indices.len() == verdicts.len() {
        group.rollout_indices.clone()
    } else {
        (0..verdicts.len()).collect()
    };
    let rollouts = indices
        .iter()
        .zip(&verdicts)
        .zip(rewards.iter().zip(&advantages))
        .map(|((&rollout_index, &verdict), (&reward, &advantage))| RolloutScore {
            rollout_index,
            verdict,
            reward,
            advantage,
        })
        .collect();
    group.verdicts = verdicts;
    group.rewards = rewards;
    group.advantages = advantages;
    Ok(RewardReport {
        question_id: group.question_id.clone(),
        rollouts,
        n_bar,
        omega,
        accuracy,
        usable,
    })
}

/// One trajectory packaged for an external policy-gradient trainer. The
/// log-probability fields are left for the trainer to fill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlRecord {
    pub question_id: String,
    pub rollout_index: usize,
    pub reward: f64,
    pub advantage: f64,
    pub tokens: Vec<String>,
    pub mask: LossMask,
    pub old_logprobs: Option<Vec<f64>>,
    pub new_logprobs: Option<Vec<f64>>,
    pub trajectory: Trajectory,
}

/// RL records for a scored group, in rollout order. Unusable groups yield
/// nothing.
pub fn export_rl(
    group: &GroupRollout,
    report: &RewardReport,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<RlRecord>, RewardError> {
    if !report.usable {
        return Ok(Vec::new());
    }
    if report.rollouts.len() != group.trajectories.len() {
        return Err(RewardError::LengthMismatch(format!(
            "{} scores, {} trajectories",
            report.rollouts.len(),
            group.trajectories.len()
        )));
    }
    group
        .trajectories
        .iter()
        .zip(&report.rollouts)
        .map(|(traj, score)| {
            let spans = TokenSpanMap::build(traj, tokenizer);
            let mask = compute_loss_mask(traj, &spans)?;
            Ok(RlRecord {
                question_id: group.question_id.clone(),
                rollout_index: score.rollout_index,
                reward: score.reward,
                advantage: score.advantage,
                tokens: spans.tokens,
                mask,
                old_logprobs: None,
                new_logprobs: None,
                trajectory: traj.clone(),
            })
        })
        .collect()
}
