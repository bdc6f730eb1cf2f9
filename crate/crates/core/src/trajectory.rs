//! Trajectory data model: the input, the ordered (reasoning, tool call, tool
//! response) turns, and the final answer of one agent rollout.
//!
//! A raw transcript is the model-side text of a rollout with tool responses
//! already spliced in:
//!
//! ```text
//! <think>...</think>
//! <tool_call>{"name": "search", ...}</tool_call>
//! <tool_response>...</tool_response>
//! <think>...</think>
//! <answer>...</answer>
//! ```
//!
//! The question is not part of the raw transcript; it becomes the `Input`
//! segment. Text between blocks is kept in [`Segment::lead`] (and trailing
//! text in [`Trajectory::trailing`]) so that [`render`] reproduces the raw
//! transcript byte for byte.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, Decoded};
use crate::toolbelt;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("span map does not match trajectory: {0}")]
    SpanMap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Input,
    Reasoning,
    ToolCall,
    ToolResponse,
    Answer,
}

impl SegmentKind {
    /// Whether tokens of this segment are produced by the policy and so
    /// carry loss.
    pub fn is_model_generated(self) -> bool {
        matches!(
            self,
            SegmentKind::Reasoning | SegmentKind::ToolCall | SegmentKind::Answer
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
    pub turn_index: u32,
    /// Raw text that preceded this block's opening delimiter.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub lead: String,
}

impl Segment {
    pub fn new(kind: SegmentKind, text: impl Into<String>, turn_index: u32) -> Self {
        Self {
            kind,
            text: text.into(),
            turn_index,
            lead: String::new(),
        }
    }

    pub fn with_lead(mut self, lead: impl Into<String>) -> Self {
        self.lead = lead.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    BudgetExhausted,
    MonitorForced,
    FormatFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub segments: Vec<Segment>,
    pub turn_count: u32,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub trailing: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn input(&self) -> Option<&str> {
        self.segments
            .iter()
            .find(|s| s.kind == SegmentKind::Input)
            .map(|s| s.text.as_str())
    }

    pub fn answer(&self) -> Option<&str> {
        self.segments
            .iter()
            .rev()
            .find(|s| s.kind == SegmentKind::Answer)
            .map(|s| s.text.as_str())
    }

    pub fn segments_of(&self, kind: SegmentKind) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.kind == kind)
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &Segment> {
        self.segments_of(SegmentKind::ToolCall)
    }
}

/// Opening and closing delimiter of one block kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub open: String,
    pub close: String,
}

impl Tag {
    pub fn new(open: &str, close: &str) -> Self {
        Self {
            open: open.to_string(),
            close: close.to_string(),
        }
    }

    pub fn wrap(&self, body: &str) -> String {
        format!("{}{}{}", self.open, body, self.close)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delimiters {
    pub think: Tag,
    pub tool_call: Tag,
    pub tool_response: Tag,
    pub answer: Tag,
}

impl Default for Delimiters {
    fn default() -> Self {
        Self {
            think: Tag::new("<think>", "</think>"),
            tool_call: Tag::new("<tool_call>", "</tool_call>"),
            tool_response: Tag::new("<tool_response>", "</tool_response>"),
            answer: Tag::new("<answer>", "</answer>"),
        }
    }
}

impl Delimiters {
    pub fn tag(&self, kind: SegmentKind) -> Option<&Tag> {
        match kind {
            SegmentKind::Input => None,
            SegmentKind::Reasoning => Some(&self.think),
            SegmentKind::ToolCall => Some(&self.tool_call),
            SegmentKind::ToolResponse => Some(&self.tool_response),
            SegmentKind::Answer => Some(&self.answer),
        }
    }

    fn block_kinds(&self) -> [(SegmentKind, &Tag); 4] {
        [
            (SegmentKind::Reasoning, &self.think),
            (SegmentKind::ToolCall, &self.tool_call),
            (SegmentKind::ToolResponse, &self.tool_response),
            (SegmentKind::Answer, &self.answer),
        ]
    }

    /// Earliest opening delimiter at or after `from`.
    fn next_open(&self, raw: &str, from: usize) -> Option<(usize, SegmentKind, &Tag)> {
        self.block_kinds()
            .into_iter()
            .filter_map(|(kind, tag)| raw[from..].find(&tag.open).map(|i| (from + i, kind, tag)))
            .min_by_key(|(pos, _, _)| *pos)
    }

    fn contains_any_delimiter(&self, text: &str) -> bool {
        self.block_kinds()
            .iter()
            .any(|(_, tag)| text.contains(&tag.open) || text.contains(&tag.close))
    }
}

/// A block found in raw model text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub kind: SegmentKind,
    pub text: String,
    pub lead: String,
}

/// Splits raw text into delimited blocks. Returns the blocks, the text after
/// the last block, and any delimiter violations encountered.
pub fn scan_blocks(raw: &str, delims: &Delimiters) -> (Vec<Block>, String, Vec<String>) {
    let mut blocks = Vec::new();
    let mut violations = Vec::new();
    let mut pos = 0;
    loop {
        let Some((open_at, kind, tag)) = delims.next_open(raw, pos) else {
            let rest = &raw[pos..];
            check_lead(rest, delims, &mut violations);
            return (blocks, rest.to_string(), violations);
        };
        let lead = &raw[pos..open_at];
        check_lead(lead, delims, &mut violations);
        let body_start = open_at + tag.open.len();
        match raw[body_start..].find(&tag.close) {
            Some(rel) => {
                let body = &raw[body_start..body_start + rel];
                if delims.contains_any_delimiter(body) {
                    violations.push(format!(
                        "interleaved delimiters inside {} block at byte {}",
                        tag.open, open_at
                    ));
                }
                blocks.push(Block {
                    kind,
                    text: body.to_string(),
                    lead: lead.to_string(),
                });
                pos = body_start + rel + tag.close.len();
            }
            None => {
                violations.push(format!("unclosed {} at byte {}", tag.open, open_at));
                blocks.push(Block {
                    kind,
                    text: raw[body_start..].to_string(),
                    lead: lead.to_string(),
                });
                return (blocks, String::new(), violations);
            }
        }
    }
}

fn check_lead(lead: &str, delims: &Delimiters, violations: &mut Vec<String>) {
    if delims.contains_any_delimiter(lead) {
        violations.push("stray closing delimiter outside any block".to_string());
    } else if !lead.trim().is_empty() {
        let excerpt: String = lead.trim().chars().take(40).collect();
        violations.push(format!("text outside delimiters: {excerpt:?}"));
    }
}

/// Checks the segment grammar `Input (Reasoning ToolCall ToolResponse)*
/// Reasoning? Answer?`.
pub fn grammar_violations(segments: &[Segment]) -> Vec<String> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Start,
        TurnStart,
        AfterReasoning,
        AfterCall,
        Done,
    }
    let mut violations = Vec::new();
    let mut state = State::Start;
    for (i, seg) in segments.iter().enumerate() {
        use SegmentKind::*;
        let next = match (state, seg.kind) {
            (State::Start, Input) => Some(State::TurnStart),
            (State::TurnStart, Reasoning) => Some(State::AfterReasoning),
            (State::TurnStart | State::AfterReasoning, Answer) => Some(State::Done),
            (State::AfterReasoning, ToolCall) => Some(State::AfterCall),
            (State::AfterCall, ToolResponse) => Some(State::TurnStart),
            _ => None,
        };
        match next {
            Some(s) => state = s,
            None => {
                let msg = match (state, seg.kind) {
                    (State::Start, _) => "trajectory must begin with exactly one input".to_string(),
                    (_, Input) => format!("duplicate input at segment {i}"),
                    (State::Done, _) => format!("segment {i} after the answer"),
                    (State::AfterCall, _) => {
                        format!("tool call not followed by a tool response at segment {i}")
                    }
                    (_, ToolCall) => format!("tool call without preceding reasoning at segment {i}"),
                    (_, ToolResponse) => format!("tool response without a tool call at segment {i}"),
                    (_, k) => format!("unexpected {k:?} at segment {i}"),
                };
                violations.push(msg);
            }
        }
    }
    if state == State::Start {
        violations.push("trajectory must begin with exactly one input".to_string());
    }
    if state == State::AfterCall {
        violations.push("tool call not followed by a tool response".to_string());
    }
    violations
}

/// Assigns turn indices: segments of turn `i` carry `i` (1-based); the
/// closing reasoning and the answer carry `N + 1`.
fn number_turns(blocks: Vec<Block>) -> (Vec<Segment>, u32) {
    let mut turn = 1u32;
    let mut calls = 0u32;
    let mut segments = Vec::with_capacity(blocks.len());
    for b in blocks {
        segments.push(Segment {
            kind: b.kind,
            text: b.text,
            turn_index: turn,
            lead: b.lead,
        });
        match b.kind {
            SegmentKind::ToolCall => calls += 1,
            SegmentKind::ToolResponse => turn += 1,
            _ => {}
        }
    }
    (segments, calls)
}

/// Parses a raw transcript. Grammar violations never error; they mark the
/// trajectory `FormatFailure` and are listed in `violations`.
pub fn parse_transcript(raw: &str, question_id: &str, question: &str) -> Trajectory {
    parse_transcript_with(raw, question_id, question, &Delimiters::default())
}

pub fn parse_transcript_with(
    raw: &str,
    question_id: &str,
    question: &str,
    delims: &Delimiters,
) -> Trajectory {
    let (blocks, trailing, mut violations) = scan_blocks(raw, delims);
    let (body, turn_count) = number_turns(blocks);
    let mut segments = Vec::with_capacity(body.len() + 1);
    segments.push(Segment::new(SegmentKind::Input, question, 0));
    segments.extend(body);
    violations.extend(grammar_violations(&segments));
    let has_answer = segments.iter().any(|s| s.kind == SegmentKind::Answer);
    if !has_answer {
        violations.push("missing answer".to_string());
    }
    let termination = if violations.is_empty() {
        Termination::Answered
    } else {
        Termination::FormatFailure
    };
    Trajectory {
        question_id: question_id.to_string(),
        segments,
        turn_count,
        termination,
        violations,
        trailing,
        seed: None,
    }
}

/// Re-renders the model-side transcript (everything except the input).
pub fn render(traj: &Trajectory) -> String {
    render_with(traj, &Delimiters::default())
}

pub fn render_with(traj: &Trajectory, delims: &Delimiters) -> String {
    let mut out = String::new();
    for seg in &traj.segments {
        if let Some(tag) = delims.tag(seg.kind) {
            out.push_str(&seg.lead);
            out.push_str(&tag.open);
            out.push_str(&seg.text);
            out.push_str(&tag.close);
        }
    }
    out.push_str(&traj.trailing);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatLimits {
    pub max_turns: u32,
    pub context_budget: usize,
}

impl Default for FormatLimits {
    fn default() -> Self {
        Self {
            max_turns: 30,
            context_budget: 40_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatVerdict {
    pub pass: bool,
    pub violations: Vec<String>,
}

/// The format predicate `F` of the reward.
pub fn validate_format(traj: &Trajectory, limits: &FormatLimits) -> FormatVerdict {
    validate_format_with(traj, limits, &WhitespaceTokenizer)
}

pub fn validate_format_with(
    traj: &Trajectory,
    limits: &FormatLimits,
    tokenizer: &dyn Tokenizer,
) -> FormatVerdict {
    let mut violations = grammar_violations(&traj.segments);
    if traj.termination == Termination::FormatFailure {
        violations.push("rollout terminated with a format failure".to_string());
    }
    for (i, call) in traj.tool_calls().enumerate() {
        if let Err(e) = toolbelt::validate_tool_call(&call.text) {
            violations.push(format!("invalid tool call {}: {e}", i + 1));
        }
    }
    if traj.answer().is_none() {
        violations.push("missing answer".to_string());
    }
    if traj.turn_count > limits.max_turns {
        violations.push(format!(
            "{} turns exceed the limit of {}",
            traj.turn_count, limits.max_turns
        ));
    }
    let tokens = total_tokens(traj, tokenizer);
    if tokens > limits.context_budget {
        violations.push(format!(
            "{tokens} tokens exceed the context budget of {}",
            limits.context_budget
        ));
    }
    violations.dedup();
    FormatVerdict {
        pass: violations.is_empty(),
        violations,
    }
}

pub fn total_tokens(traj: &Trajectory, tokenizer: &dyn Tokenizer) -> usize {
    traj.segments
        .iter()
        .map(|s| tokenizer.count(&s.text))
        .sum()
}

/// Splits text into tokens, reported as byte ranges into the input.
pub trait Tokenizer: Send + Sync {
    fn token_ranges(&self, text: &str) -> Vec<Range<usize>>;

    fn count(&self, text: &str) -> usize {
        self.token_ranges(text).len()
    }

    fn tokens(&self, text: &str) -> Vec<String> {
        self.token_ranges(text)
            .into_iter()
            .map(|r| text[r].to_string())
            .collect()
    }
}

/// Maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn token_ranges(&self, text: &str) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    out.push(s..i);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push(s..text.len());
        }
        out
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub segment_index: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpanMap {
    pub tokens: Vec<String>,
    pub spans: Vec<TokenSpan>,
}

impl TokenSpanMap {
    pub fn build(traj: &Trajectory, tokenizer: &dyn Tokenizer) -> Self {
        let mut tokens = Vec::new();
        let mut spans = Vec::with_capacity(traj.segments.len());
        for (segment_index, seg) in traj.segments.iter().enumerate() {
            let start = tokens.len();
            tokens.extend(tokenizer.tokens(&seg.text));
            spans.push(TokenSpan {
                segment_index,
                start,
                end: tokens.len(),
            });
        }
        Self { tokens, spans }
    }

    fn check_against(&self, traj: &Trajectory) -> Result<(), TrajectoryError> {
        if self.spans.len() != traj.segments.len() {
            return Err(TrajectoryError::SpanMap(format!(
                "{} spans for {} segments",
                self.spans.len(),
                traj.segments.len()
            )));
        }
        let mut cursor = 0;
        for (i, span) in self.spans.iter().enumerate() {
            if span.segment_index != i {
                return Err(TrajectoryError::SpanMap(format!(
                    "span {i} maps to segment {}",
                    span.segment_index
                )));
            }
            if span.start != cursor || span.end < span.start {
                return Err(TrajectoryError::SpanMap(format!(
                    "span {i} [{}, {}) does not continue at token {cursor}",
                    span.start, span.end
                )));
            }
            cursor = span.end;
        }
        if cursor != self.tokens.len() {
            return Err(TrajectoryError::SpanMap(format!(
                "spans cover {cursor} of {} tokens",
                self.tokens.len()
            )));
        }
        Ok(())
    }
}

/// Per-token binary loss weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossMask(pub Vec<u8>);

impl LossMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.0.iter().filter(|&&m| m == 1).count()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

/// Input and tool-response tokens get 0; reasoning, tool-call and answer
/// tokens get 1.
pub fn compute_loss_mask(
    traj: &Trajectory,
    span_map: &TokenSpanMap,
) -> Result<LossMask, TrajectoryError> {
    span_map.check_against(traj)?;
    let mut mask = vec![0u8; span_map.tokens.len()];
    for span in &span_map.spans {
        if traj.segments[span.segment_index].kind.is_model_generated() {
            mask[span.start..span.end].fill(1);
        }
    }
    Ok(LossMask(mask))
}

pub fn encode_records(trajs: &[Trajectory]) -> Vec<u8> {
    jsonl::encode(trajs)
}

pub fn decode_records(bytes: &[u8]) -> Decoded<Trajectory> {
    jsonl::decode(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds(t: &Trajectory) -> Vec<SegmentKind> {
        t.segments.iter().map(|s| s.kind).collect()
    }

    const FIG8_TRANSCRIPT: &str = "<think>The aggressive subtype is alveolar rhabdomyosarcoma; I should confirm the fusion.</think>\n<tool_call>{\"name\": \"search\", \"arguments\": {\"query\": [\"PAX3 FOXO1 fusion chromosomal translocation\"]}}</tool_call>\n<tool_response>1. PAX3-FOXO1 arises from t(2;13)(q35;q14).</tool_response>\n<think>Confirmed.</think>\n<answer>t(2;13)(q35;q14) translocation</answer>";

    #[test]
    fn one_turn_transcript_is_answered() {
        let t = parse_transcript(FIG8_TRANSCRIPT, "rms", "Identify the rearrangement.");
        assert_eq!(t.turn_count, 1);
        assert_eq!(t.termination, Termination::Answered);
        assert_eq!(t.answer(), Some("t(2;13)(q35;q14) translocation"));
        assert!(t.violations.is_empty());
        assert_eq!(
            kinds(&t),
            vec![
                SegmentKind::Input,
                SegmentKind::Reasoning,
                SegmentKind::ToolCall,
                SegmentKind::ToolResponse,
                SegmentKind::Reasoning,
                SegmentKind::Answer
            ]
        );
        let turns: Vec<u32> = t.segments.iter().map(|s| s.turn_index).collect();
        assert_eq!(turns, vec![0, 1, 1, 1, 2, 2]);
        assert_eq!(render(&t), FIG8_TRANSCRIPT);
    }

    #[test]
    fn answer_only_transcript() {
        let t = parse_transcript("<answer>42</answer>", "q", "what?");
        assert_eq!(t.turn_count, 0);
        assert_eq!(t.termination, Termination::Answered);
        assert_eq!(t.segments[1].turn_index, 1);
    }

    #[test]
    fn unclosed_block_is_format_failure_with_partial_segments() {
        let raw = "<think>hmm</think><tool_call>{\"name\":\"search\"";
        let t = parse_transcript(raw, "q", "x");
        assert_eq!(t.termination, Termination::FormatFailure);
        assert!(t.violations.iter().any(|v| v.contains("unclosed <tool_call>")));
        assert_eq!(t.segments.len(), 3);
    }

    #[test]
    fn interleaved_delimiters_are_recorded() {
        let raw = "<think>a <answer>b</think></answer>";
        let t = parse_transcript(raw, "q", "x");
        assert_eq!(t.termination, Termination::FormatFailure);
        assert!(t.violations.iter().any(|v| v.contains("interleaved")));
    }

    #[test]
    fn stray_text_is_a_violation_but_round_trips() {
        let raw = "oops <think>a</think><answer>b</answer>";
        let t = parse_transcript(raw, "q", "x");
        assert_eq!(t.termination, Termination::FormatFailure);
        assert_eq!(render(&t), raw);
    }

    #[test]
    fn missing_tool_response_breaks_grammar() {
        let raw = "<think>a</think><tool_call>{}</tool_call><answer>b</answer>";
        let t = parse_transcript(raw, "q", "x");
        assert_eq!(t.termination, Termination::FormatFailure);
    }

    #[test]
    fn custom_delimiters() {
        let delims = Delimiters {
            answer: Tag::new("<Answer>", "</Answer>"),
            ..Delimiters::default()
        };
        let raw = "<think>x</think>\n<Answer> (D) Gastroduodenal artery </Answer>";
        let t = parse_transcript_with(raw, "q", "x", &delims);
        assert_eq!(t.termination, Termination::Answered);
        assert_eq!(render_with(&t, &delims), raw);
    }

    fn five_turn() -> Trajectory {
        let mut raw = String::new();
        for i in 0..5 {
            raw.push_str(&format!(
                "<think>step {i}</think><tool_call>{{\"name\":\"search\",\"arguments\":{{\"query\":[\"q{i}\"]}}}}</tool_call><tool_response>r{i}</tool_response>"
            ));
        }
        raw.push_str("<think>done</think><answer>A</answer>");
        parse_transcript(&raw, "q5", "question")
    }

    #[test]
    fn validate_well_formed() {
        let t = five_turn();
        assert_eq!(t.turn_count, 5);
        let v = validate_format(&t, &FormatLimits::default());
        assert!(v.pass, "{:?}", v.violations);
    }

    #[test]
    fn validate_missing_answer() {
        let mut t = five_turn();
        t.segments.pop();
        t.termination = Termination::BudgetExhausted;
        let v = validate_format(&t, &FormatLimits::default());
        assert!(!v.pass);
        assert!(v.violations.iter().any(|s| s == "missing answer"));
    }

    #[test]
    fn validate_turn_limit() {
        let mut raw = String::new();
        for _ in 0..31 {
            raw.push_str("<think>t</think><tool_call>{\"name\":\"search\",\"arguments\":{\"query\":[\"x\"]}}</tool_call><tool_response>r</tool_response>");
        }
        raw.push_str("<answer>A</answer>");
        let t = parse_transcript(&raw, "q", "x");
        assert_eq!(t.turn_count, 31);
        let v = validate_format(&t, &FormatLimits { max_turns: 30, context_budget: 40_000 });
        assert!(!v.pass);
        let v = validate_format(&t, &FormatLimits { max_turns: 31, context_budget: 40_000 });
        assert!(v.pass);
    }

    #[test]
    fn validate_context_budget_and_bad_call() {
        let t = parse_transcript(
            "<think>a b c d</think><tool_call>{\"name\":\"browse\",\"arguments\":{}}</tool_call><tool_response>x</tool_response><answer>A</answer>",
            "q",
            "x",
        );
        let v = validate_format(&t, &FormatLimits { max_turns: 30, context_budget: 3 });
        assert!(!v.pass);
        assert!(v.violations.iter().any(|s| s.contains("context budget")));
        assert!(v.violations.iter().any(|s| s.contains("invalid tool call")));
    }

    fn spans_for(lens: &[(SegmentKind, usize)]) -> (Trajectory, TokenSpanMap) {
        let mut segments = Vec::new();
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        for (i, (kind, n)) in lens.iter().enumerate() {
            let words: Vec<String> = (0..*n).map(|j| format!("w{i}_{j}")).collect();
            segments.push(Segment::new(*kind, words.join(" "), 1));
            spans.push(TokenSpan { segment_index: i, start: tokens.len(), end: tokens.len() + n });
            tokens.extend(words);
        }
        let traj = Trajectory {
            question_id: "m".into(),
            segments,
            turn_count: 0,
            termination: Termination::Answered,
            violations: vec![],
            trailing: String::new(),
            seed: None,
        };
        (traj, TokenSpanMap { tokens, spans })
    }

    #[test]
    fn mask_single_response_span_is_all_zero() {
        let (t, m) = spans_for(&[(SegmentKind::ToolResponse, 6)]);
        assert_eq!(compute_loss_mask(&t, &m).unwrap().0, vec![0; 6]);
    }

    #[test]
    fn mask_single_reasoning_span_is_all_one() {
        let (t, m) = spans_for(&[(SegmentKind::Reasoning, 4)]);
        assert_eq!(compute_loss_mask(&t, &m).unwrap().0, vec![1; 4]);
    }

    #[test]
    fn mask_mixed_segments() {
        let (t, m) = spans_for(&[
            (SegmentKind::Input, 3),
            (SegmentKind::Reasoning, 4),
            (SegmentKind::ToolCall, 2),
            (SegmentKind::ToolResponse, 5),
            (SegmentKind::Answer, 1),
        ]);
        let mask = compute_loss_mask(&t, &m).unwrap();
        assert_eq!(mask.0, vec![0, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 1]);
        // Whitespace tokenizer produces the same spans.
        assert_eq!(TokenSpanMap::build(&t, &WhitespaceTokenizer), m);
    }

    #[test]
    fn mask_rejects_non_partition() {
        let (t, mut m) = spans_for(&[(SegmentKind::Input, 2), (SegmentKind::Answer, 2)]);
        m.spans[1].start = 1;
        assert!(matches!(compute_loss_mask(&t, &m), Err(TrajectoryError::SpanMap(_))));
        let (t, mut m) = spans_for(&[(SegmentKind::Input, 2)]);
        m.tokens.push("extra".into());
        assert!(compute_loss_mask(&t, &m).is_err());
    }

    #[test]
    fn records_empty_and_single() {
        assert!(encode_records(&[]).is_empty());
        assert!(decode_records(b"").records.is_empty());
        let t = parse_transcript(FIG8_TRANSCRIPT, "rms", "Identify.");
        let bytes = encode_records(std::slice::from_ref(&t));
        let back = decode_records(&bytes);
        assert!(back.errors.is_empty());
        assert_eq!(back.records, vec![t]);
    }

    #[test]
    fn decode_reports_bad_line_and_keeps_rest() {
        let t = parse_transcript("<answer>x</answer>", "a", "q");
        let mut bytes = encode_records(std::slice::from_ref(&t));
        bytes.extend_from_slice(b"{not json\n");
        bytes.extend(encode_records(std::slice::from_ref(&t)));
        let back = decode_records(&bytes);
        assert_eq!(back.records.len(), 2);
        assert_eq!(back.errors.len(), 1);
        assert_eq!(back.errors[0].line, 2);
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 ,.;:()\\n\"{}-]{0,24}"
    }

    fn arb_transcript() -> impl Strategy<Value = String> {
        (
            prop::collection::vec((arb_text(), arb_text(), arb_text(), "[ \\n]{0,2}"), 0..5),
            prop::option::of(arb_text()),
            prop::option::of(arb_text()),
            "[ \\n]{0,2}",
        )
            .prop_map(|(turns, closing, answer, trailing)| {
                let mut raw = String::new();
                for (r, c, o, sep) in turns {
                    raw.push_str(&format!(
                        "{sep}<think>{r}</think>{sep}<tool_call>{c}</tool_call>{sep}<tool_response>{o}</tool_response>"
                    ));
                }
                if let Some(c) = closing {
                    raw.push_str(&format!("\n<think>{c}</think>"));
                }
                if let Some(a) = answer {
                    raw.push_str(&format!("\n<answer>{a}</answer>"));
                }
                raw.push_str(&trailing);
                raw
            })
    }

    proptest! {
        #[test]
        fn render_inverts_parse(raw in arb_transcript()) {
            let t = parse_transcript(&raw, "p", "question");
            prop_assert_eq!(render(&t), raw);
            let responses = t.segments_of(SegmentKind::ToolResponse).count() as u32;
            prop_assert_eq!(t.turn_count, responses);
            prop_assert!(grammar_violations(&t.segments).is_empty());
        }

        #[test]
        fn validate_is_deterministic(raw in arb_transcript(), max_turns in 0u32..6) {
            let t = parse_transcript(&raw, "p", "question");
            let limits = FormatLimits { max_turns, context_budget: 100 };
            prop_assert_eq!(validate_format(&t, &limits), validate_format(&t, &limits));
        }
    }
}
