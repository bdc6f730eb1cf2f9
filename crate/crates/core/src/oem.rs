//! Over-evidence monitor.
//!
//! Watches each assistant turn for a proposed answer and caches it. When the
//! cached proposal survives `stall_threshold` further turns unchanged, or the
//! rollout reaches `hard_cap_turn` with a proposal cached, the rollout is
//! stopped and the cached answer returned as the final answer.

use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::answer::{normalize_answer, NormalizedAnswer};
use crate::backend::{generate_with_retry, GenerateRequest, Message, ModelBackend, Sampling};
use crate::toolbelt::parse_json_object;
use crate::trajectory::{scan_blocks, Delimiters, SegmentKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub enabled: bool,
    /// Consecutive unchanged-cache turns before the monitor fires.
    pub stall_threshold: u32,
    /// Turn at which the monitor fires if any answer is cached.
    pub hard_cap_turn: u32,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { enabled: true, stall_threshold: 3, hard_cap_turn: 20 }
    }
}

impl MonitorConfig {
    pub fn validate(&self, max_turns: u32) -> Result<(), String> {
        if self.stall_threshold < 1 {
            return Err("monitor.stall_threshold must be at least 1".into());
        }
        if self.hard_cap_turn < 1 {
            return Err("monitor.hard_cap_turn must be at least 1".into());
        }
        // The cap counts assistant turns; a rollout may take max_turns tool
        // turns plus one answering turn.
        if self.hard_cap_turn > max_turns + 1 {
            return Err(format!(
                "monitor.hard_cap_turn {} exceeds the rollout limit of {max_turns} turns",
                self.hard_cap_turn
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorState {
    pub cached_answer: Option<NormalizedAnswer>,
    /// Surface form of the cached proposal, spliced in as the final answer.
    pub cached_text: Option<String>,
    pub unchanged_streak: u32,
    pub turns_observed: u32,
    pub fired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorAction {
    /// First proposal, or a proposal different from the cached one.
    Cached,
    Unchanged,
    NoProposal,
    Fired,
}

/// One line of the monitor event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub question_id: String,
    pub rollout_index: usize,
    /// 1-based assistant turn.
    pub turn: u32,
    pub action: MonitorAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cached_answer: Option<String>,
    pub unchanged_streak: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub stop: bool,
    pub answer: Option<String>,
}

/// A proposed answer found in one assistant turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub surface: String,
    pub normalized: NormalizedAnswer,
}

impl Proposal {
    pub fn new(surface: &str) -> Self {
        let surface = surface.trim().to_string();
        Self { normalized: normalize_answer(&surface), surface }
    }
}

/// Infers the answer, if any, that an assistant turn is proposing.
pub trait ProposalExtractor: Send + Sync {
    fn propose(&self, turn_output: &str) -> Option<Proposal>;
}

static ANSWER_PHRASE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:final\s+|most\s+likely\s+|correct\s+|best\s+|right\s+)?answer\s*(?:is|:|=|would\s+be|should\s+be|must\s+be)\s*(?:likely\s+|probably\s+|clearly\s+|therefore\s+)?(?:option\s*)?([^\n]{1,160})",
    )
    .expect("answer regex")
});

static OPTION_PHRASE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i:option|choice)\s*\(?([A-J])\)?\s+(?i:is|seems|appears\s+to\s+be)\s+(?i:correct|right|the\s+answer|most\s+likely)")
        .expect("option regex")
});

static HEDGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:[,;]\s*|\s+)(?:but|though|although|however|yet|still|let\s+me|I\s+should|I\s+will|I'll)\b")
        .expect("hedge regex")
});

/// Drops a trailing hedge such as ", but I should double-check".
fn strip_hedge(phrase: &str) -> &str {
    HEDGE.find(phrase).map_or(phrase, |m| &phrase[..m.start()])
}

/// Cuts a captured phrase at the first sentence end, keeping inner
/// punctuation of tokens like `t(2;13)(q35;q14)` or `2.5`.
fn sentence_prefix(phrase: &str) -> &str {
    let bytes = phrase.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'.' || b == b'!' || b == b'?' {
            let next = bytes.get(i + 1).copied();
            if next.is_none() || next.is_some_and(|n| n.is_ascii_whitespace()) {
                return &phrase[..i];
            }
        }
    }
    phrase
}

/// Pattern-based proposal detection over the reasoning and answer content.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleExtractor;

impl RuleExtractor {
    pub fn propose_in_reasoning(text: &str) -> Option<Proposal> {
        let mut best: Option<(usize, Proposal)> = None;
        for m in ANSWER_PHRASE.captures_iter(text) {
            let cap = m.get(1).expect("group 1");
            let phrase = strip_hedge(sentence_prefix(cap.as_str())).trim();
            if phrase.is_empty() {
                continue;
            }
            best = Some((cap.start(), Proposal::new(phrase)));
        }
        for m in OPTION_PHRASE.captures_iter(text) {
            let cap = m.get(1).expect("group 1");
            if best.as_ref().is_none_or(|(pos, _)| cap.start() > *pos) {
                best = Some((cap.start(), Proposal::new(cap.as_str())));
            }
        }
        best.map(|(_, p)| p)
    }
}

impl ProposalExtractor for RuleExtractor {
    fn propose(&self, turn_output: &str) -> Option<Proposal> {
        let (blocks, trailing, _) = scan_blocks(turn_output, &Delimiters::default());
        if let Some(answer) = blocks.iter().find(|b| b.kind == SegmentKind::Answer) {
            return Some(Proposal::new(&answer.text));
        }
        let mut reasoning: Vec<&str> = Vec::new();
        for b in &blocks {
            reasoning.push(&b.lead);
            if b.kind == SegmentKind::Reasoning {
                reasoning.push(&b.text);
            }
        }
        reasoning.push(&trailing);
        Self::propose_in_reasoning(&reasoning.join("\n"))
    }
}

pub const INTENT_PROMPT: &str = "You monitor a research agent. Read its latest response and infer its intent: is it exploring, verifying an answer it already holds, or answering? If the response proposes a candidate final answer (even tentatively), report it.

Response:
{response}

Reply with JSON only: {\"intent\": \"explore\" | \"verify\" | \"answer\", \"proposed_answer\": string or null}";

/// Asks a classifier model for the turn's intent and proposed answer.
pub struct BackendExtractor {
    backend: Arc<dyn ModelBackend>,
}

impl BackendExtractor {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        Self { backend }
    }
}

#[derive(Deserialize)]
struct IntentReply {
    #[allow(dead_code)]
    intent: Option<String>,
    proposed_answer: Option<String>,
}

impl ProposalExtractor for BackendExtractor {
    fn propose(&self, turn_output: &str) -> Option<Proposal> {
        let messages = [Message::user(INTENT_PROMPT.replacen("{response}", turn_output, 1))];
        let req = GenerateRequest {
            messages: &messages,
            sampling: Sampling { temperature: 0.0, max_tokens: Some(256), seed: 0 },
            context: Default::default(),
        };
        match generate_with_retry(self.backend.as_ref(), &req, 2)
            .ok()
            .and_then(|text| parse_json_object::<IntentReply>(&text))
        {
            Some(reply) => reply
                .proposed_answer
                .filter(|a| !a.trim().is_empty())
                .map(|a| Proposal::new(&a)),
            // Fall back to the rules when the classifier is unusable.
            None => RuleExtractor.propose(turn_output),
        }
    }
}

/// Folds one assistant turn into the monitor state.
pub fn observe(
    state: &MonitorState,
    turn_output: &str,
    extractor: &dyn ProposalExtractor,
) -> (MonitorState, MonitorAction) {
    observe_proposal(state, extractor.propose(turn_output))
}

pub fn observe_proposal(
    state: &MonitorState,
    proposal: Option<Proposal>,
) -> (MonitorState, MonitorAction) {
    let mut next = state.clone();
    next.turns_observed += 1;
    let action = match proposal {
        None => MonitorAction::NoProposal,
        Some(p) => match &state.cached_answer {
            Some(cached) if cached.same_as(&p.normalized) => {
                next.unchanged_streak += 1;
                MonitorAction::Unchanged
            }
            _ => {
                next.cached_answer = Some(p.normalized);
                next.cached_text = Some(p.surface);
                next.unchanged_streak = 0;
                MonitorAction::Cached
            }
        },
    };
    (next, action)
}

pub fn should_terminate(state: &MonitorState, cfg: &MonitorConfig) -> Decision {
    let cached = state.cached_answer.is_some();
    let stop = cfg.enabled
        && cached
        && (state.unchanged_streak >= cfg.stall_threshold
            || state.turns_observed >= cfg.hard_cap_turn);
    Decision {
        stop,
        answer: if stop { state.cached_text.clone() } else { None },
    }
}
