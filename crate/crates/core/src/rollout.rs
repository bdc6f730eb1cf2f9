//! The ReAct rollout loop and GRPO group sampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{normalize_answer, NormalizedAnswer};
use crate::backend::{
    generate_with_retry, BackendError, CallContext, GenerateRequest, Message, ModelBackend,
    Sampling,
};
use crate::oem::{
    observe, should_terminate, MonitorAction, MonitorConfig, MonitorEvent, MonitorState,
    ProposalExtractor, RuleExtractor,
};
use crate::reward::Verdict;
use crate::toolbelt::Toolbelt;
use crate::trajectory::{
    scan_blocks, total_tokens, Delimiters, Segment, SegmentKind, Termination, Tokenizer, Trajectory,
    WhitespaceTokenizer,
};

pub use crate::backend::ModelBackend as Backend;

/// System prompt given to the policy.
pub const SYSTEM_PROMPT: &str = "You are a Medical deep research assistant. Your core function is to conduct thorough, multi-source investigations into any topic. You must handle both broad, open-domain inquiries and queries within specialized academic fields. For every request, synthesize information from credible, diverse sources to deliver a comprehensive, accurate, and objective response. When you have gathered sufficient information and are ready to provide the definitive response, you must enclose the entire final answer within <answer></answer> tags.";

/// Attempts per backend call before a rollout is discarded.
const BACKEND_ATTEMPTS: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RolloutError {
    #[error("backend failed at turn {turn}: {source}")]
    Backend { turn: u32, source: BackendError },
    #[error("invalid rollout config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    MultipleChoice,
    OpenEnded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub kind: QuestionKind,
    pub value: String,
}

impl GoldAnswer {
    pub fn choice(letter: &str) -> Self {
        Self { kind: QuestionKind::MultipleChoice, value: letter.to_string() }
    }
    pub fn open(value: &str) -> Self {
        Self { kind: QuestionKind::OpenEnded, value: value.to_string() }
    }
}

/// One line of a question file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub question: String,
    pub gold: GoldAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// Maximum tool-calling turns.
    pub max_turns: u32,
    /// Token budget over all segments.
    pub context_budget: usize,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub group_size: usize,
    /// Rollouts of a group run concurrently up to this many at a time.
    pub parallelism: usize,
    pub monitor: Option<MonitorConfig>,
    pub system_prompt: Option<String>,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_turns: 30,
            context_budget: 40_000,
            temperature: 1.0,
            max_tokens: None,
            group_size: 8,
            parallelism: 8,
            monitor: None,
            system_prompt: None,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.max_turns < 1 {
            return Err(RolloutError::Config("max_turns must be at least 1".into()));
        }
        if self.group_size < 1 {
            return Err(RolloutError::Config("group_size must be at least 1".into()));
        }
        if self.parallelism < 1 {
            return Err(RolloutError::Config("parallelism must be at least 1".into()));
        }
        if let Some(m) = &self.monitor {
            m.validate(self.max_turns).map_err(RolloutError::Config)?;
        }
        Ok(())
    }

    fn active_monitor(&self) -> Option<&MonitorConfig> {
        self.monitor.as_ref().filter(|m| m.enabled)
    }
}

/// A finished rollout with its monitor log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRun {
    pub trajectory: Trajectory,
    pub monitor_events: Vec<MonitorEvent>,
}

/// Seed for rollout `index` of a group (splitmix64 over both inputs).
pub fn rollout_seed(group_seed: u64, index: usize) -> u64 {
    let mut z = group_seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct TurnParts {
    reasoning: String,
    tool_call: Option<String>,
    answer: Option<String>,
}

fn split_turn(text: &str, delims: &Delimiters) -> TurnParts {
    let (blocks, _, _) = scan_blocks(text, delims);
    let first = |kind| {
        blocks
            .iter()
            .find(|b| b.kind == kind)
            .map(|b| b.text.clone())
    };
    let reasoning = blocks
        .iter()
        .filter(|b| b.kind == SegmentKind::Reasoning)
        .map(|b| b.text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    TurnParts {
        reasoning,
        tool_call: first(SegmentKind::ToolCall),
        answer: first(SegmentKind::Answer),
    }
}

struct Builder {
    segments: Vec<Segment>,
    turn_count: u32,
}

impl Builder {
    fn push(&mut self, kind: SegmentKind, text: String) {
        let lead = if self.segments.len() > 1 { "\n" } else { "" };
        self.segments.push(Segment {
            kind,
            text,
            turn_index: self.turn_count + 1,
            lead: lead.to_string(),
        });
    }
}

/// Runs one rollout with the rule-based monitor (when configured).
pub fn run_rollout(
    question: &Question,
    cfg: &RolloutConfig,
    backend: &dyn ModelBackend,
    tools: &Toolbelt,
    rollout_index: usize,
    seed: u64,
) -> Result<RolloutRun, RolloutError> {
    run_rollout_with(question, cfg, backend, tools, &RuleExtractor, rollout_index, seed)
}

pub fn run_rollout_with(
    question: &Question,
    cfg: &RolloutConfig,
    backend: &dyn ModelBackend,
    tools: &Toolbelt,
    extractor: &dyn ProposalExtractor,
    rollout_index: usize,
    seed: u64,
) -> Result<RolloutRun, RolloutError> {
    cfg.validate()?;
    let delims = Delimiters::default();
    let system = cfg.system_prompt.as_deref().unwrap_or(SYSTEM_PROMPT);
    let mut messages = vec![Message::system(system), Message::user(&question.question)];
    let mut b = Builder {
        segments: vec![Segment::new(SegmentKind::Input, &question.question, 0)],
        turn_count: 0,
    };
    let monitor = cfg.active_monitor();
    let mut state = MonitorState::default();
    let mut events = Vec::new();
    let mut violations = Vec::new();

    let termination = loop {
        let call_index = b.turn_count;
        let req = GenerateRequest {
            messages: &messages,
            sampling: Sampling { temperature: cfg.temperature, max_tokens: cfg.max_tokens, seed },
            context: CallContext {
                question_id: question.id.clone(),
                rollout_index,
                turn_index: call_index,
            },
        };
        let text = generate_with_retry(backend, &req, BACKEND_ATTEMPTS)
            .map_err(|source| RolloutError::Backend { turn: call_index, source })?;
        let parts = split_turn(&text, &delims);

        if let Some(mcfg) = monitor {
            let (next, action) = observe(&state, &text, extractor);
            state = next;
            let decision = should_terminate(&state, mcfg);
            let action = if decision.stop && parts.answer.is_none() {
                state.fired = true;
                MonitorAction::Fired
            } else {
                action
            };
            events.push(MonitorEvent {
                question_id: question.id.clone(),
                rollout_index,
                turn: state.turns_observed,
                action,
                cached_answer: state.cached_text.clone(),
                unchanged_streak: state.unchanged_streak,
            });
        }

        if let Some(answer) = parts.answer {
            if !parts.reasoning.is_empty() {
                b.push(SegmentKind::Reasoning, parts.reasoning);
            }
            b.push(SegmentKind::Answer, answer);
            break Termination::Answered;
        }
        if state.fired {
            if !parts.reasoning.is_empty() {
                b.push(SegmentKind::Reasoning, parts.reasoning);
            }
            let forced = state.cached_text.clone().expect("monitor fires only with a cached answer");
            b.push(SegmentKind::Answer, forced);
            break Termination::MonitorForced;
        }
        let Some(call) = parts.tool_call else {
            b.push(SegmentKind::Reasoning, parts.reasoning);
            violations.push(format!("turn {} has neither a tool call nor an answer", call_index + 1));
            break Termination::FormatFailure;
        };
        if b.turn_count >= cfg.max_turns {
            b.push(SegmentKind::Reasoning, parts.reasoning);
            break Termination::BudgetExhausted;
        }

        let response = tools.execute(&call);
        messages.push(Message::assistant(format!(
            "{}\n{}",
            delims.think.wrap(&parts.reasoning),
            delims.tool_call.wrap(&call)
        )));
        messages.push(Message::user(delims.tool_response.wrap(&response)));
        b.push(SegmentKind::Reasoning, parts.reasoning);
        b.push(SegmentKind::ToolCall, call);
        b.push(SegmentKind::ToolResponse, response);
        b.turn_count += 1;

        let used = b.segments.iter().map(|s| WhitespaceTokenizer.count(&s.text)).sum::<usize>();
        if used > cfg.context_budget {
            violations.push(format!("{used} tokens exceed the context budget of {}", cfg.context_budget));
            break Termination::FormatFailure;
        }
    };

    let trajectory = Trajectory {
        question_id: question.id.clone(),
        segments: b.segments,
        turn_count: b.turn_count,
        termination,
        violations,
        trailing: String::new(),
        seed: Some(seed),
    };
    debug_assert!(total_tokens(&trajectory, &WhitespaceTokenizer) > 0 || question.question.is_empty());
    Ok(RolloutRun { trajectory, monitor_events: events })
}

/// Final answer of a trajectory, normalized.
pub fn extract_answer(traj: &Trajectory) -> Option<NormalizedAnswer> {
    traj.answer().map(normalize_answer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutFailure {
    pub rollout_index: usize,
    pub seed: u64,
    pub error: String,
}

/// G rollouts of one question. Rollouts that failed at the backend are
/// discarded and listed in `failures`; `verdicts`, `rewards` and
/// `advantages` are filled in by [`crate::reward::score_group`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub question_id: String,
    pub gold: GoldAnswer,
    pub group_seed: u64,
    pub rollout_indices: Vec<usize>,
    pub seeds: Vec<u64>,
    pub trajectories: Vec<Trajectory>,
    pub monitor_events: Vec<MonitorEvent>,
    pub failures: Vec<RolloutFailure>,
    pub usable: bool,
    #[serde(default)]
    pub verdicts: Vec<Verdict>,
    #[serde(default)]
    pub rewards: Vec<f64>,
    #[serde(default)]
    pub advantages: Vec<f64>,
}

/// Samples `cfg.group_size` rollouts with seeds derived from `group_seed`.
/// Output order follows rollout index regardless of scheduling. A group
/// where more than half the rollouts fail is marked unusable.
pub fn run_group(
    question: &Question,
    cfg: &RolloutConfig,
    backend: &dyn ModelBackend,
    tools: &Toolbelt,
    group_seed: u64,
) -> Result<GroupRollout, RolloutError> {
    run_group_with(question, cfg, backend, tools, &RuleExtractor, group_seed)
}

pub fn run_group_with(
    question: &Question,
    cfg: &RolloutConfig,
    backend: &dyn ModelBackend,
    tools: &Toolbelt,
    extractor: &dyn ProposalExtractor,
    group_seed: u64,
) -> Result<GroupRollout, RolloutError> {
    cfg.validate()?;
    let g = cfg.group_size;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.min(g))
        .build()
        .map_err(|e| RolloutError::Config(e.to_string()))?;
    let results: Vec<(usize, u64, Result<RolloutRun, RolloutError>)> = pool.install(|| {
        (0..g)
            .into_par_iter()
            .map(|i| {
                let seed = rollout_seed(group_seed, i);
                (i, seed, run_rollout_with(question, cfg, backend, tools, extractor, i, seed))
            })
            .collect()
    });

    let mut group = GroupRollout {
        question_id: question.id.clone(),
        gold: question.gold.clone(),
        group_seed,
        rollout_indices: Vec::with_capacity(g),
        seeds: Vec::with_capacity(g),
        trajectories: Vec::with_capacity(g),
        monitor_events: Vec::new(),
        failures: Vec::new(),
        usable: true,
        verdicts: Vec::new(),
        rewards: Vec::new(),
        advantages: Vec::new(),
    };
    for (i, seed, result) in results {
        match result {
            Ok(run) => {
                group.rollout_indices.push(i);
                group.seeds.push(seed);
                group.trajectories.push(run.trajectory);
                group.monitor_events.extend(run.monitor_events);
            }
            Err(RolloutError::Config(msg)) => return Err(RolloutError::Config(msg)),
            Err(e) => group.failures.push(RolloutFailure { rollout_index: i, seed, error: e.to_string() }),
        }
    }
    group.usable = group.failures.len() * 2 <= g;
    Ok(group)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FnBackend, ScriptedBackend};
    use crate::toolbelt::mock::{MockPage, MockWeb};
    use crate::toolbelt::render_search;
    use crate::trajectory::{grammar_violations, validate_format, FormatLimits};
    use std::sync::Arc;

    fn q(id: &str) -> Question {
        Question { id: id.into(), question: "Which structure?".into(), gold: GoldAnswer::choice("D") }
    }

    fn tools() -> Toolbelt {
        Toolbelt::mock(Arc::new(MockWeb::new(vec![MockPage {
            url: "https://pmc.ncbi.nlm.nih.gov/articles/PMC9628537/".into(),
            title: "Hepatic arterial haemorrhage caused by duodenal ulcer".into(),
            content: "Most posterior wall duodenal bulb ulcers erode into the gastroduodenal artery.".into(),
        }])))
    }

    const SEARCH: &str = r#"<think>verify</think>
<tool_call>{"name":"search","arguments":{"query":["posterior duodenal ulcer erosion"]}}</tool_call>"#;

    #[test]
    fn immediate_answer() {
        let backend = ScriptedBackend::new().reply("q", 0, "<think>easy</think><answer>D</answer>");
        let run = run_rollout(&q("q"), &RolloutConfig::default(), &backend, &tools(), 0, 1).unwrap();
        let t = run.trajectory;
        assert_eq!(t.turn_count, 0);
        assert_eq!(t.termination, Termination::Answered);
        assert!(validate_format(&t, &FormatLimits::default()).pass);
    }

    #[test]
    fn one_search_then_answer_replays_mock_rendering() {
        let backend = ScriptedBackend::new()
            .reply("q", 0, SEARCH)
            .reply("q", 1, "<think>found it</think><answer>(D) Gastroduodenal artery</answer>");
        let tb = tools();
        let run = run_rollout(&q("q"), &RolloutConfig::default(), &backend, &tb, 0, 1).unwrap();
        let t = run.trajectory;
        assert_eq!(t.turn_count, 1);
        assert_eq!(t.termination, Termination::Answered);
        let response = t.segments_of(SegmentKind::ToolResponse).next().unwrap();
        let expected = render_search(&tb.search(&crate::toolbelt::SearchRequest {
            queries: vec!["posterior duodenal ulcer erosion".into()],
        }));
        assert_eq!(response.text, expected);
        assert_eq!(extract_answer(&t).unwrap().letter, Some('D'));
    }

    #[test]
    fn never_answering_exhausts_budget() {
        let backend = FnBackend::constant(SEARCH);
        let cfg = RolloutConfig { max_turns: 30, ..Default::default() };
        let t = run_rollout(&q("q"), &cfg, &backend, &tools(), 0, 1).unwrap().trajectory;
        assert_eq!(t.termination, Termination::BudgetExhausted);
        assert_eq!(t.turn_count, 30);
        assert!(grammar_violations(&t.segments).is_empty());
    }

    #[test]
    fn answer_wins_over_tool_call() {
        let backend = FnBackend::constant(format!("{SEARCH}\n<answer>D</answer>"));
        let t = run_rollout(&q("q"), &RolloutConfig::default(), &backend, &tools(), 0, 1)
            .unwrap()
            .trajectory;
        assert_eq!(t.termination, Termination::Answered);
        assert_eq!(t.turn_count, 0);
    }

    #[test]
    fn turn_without_call_or_answer_is_format_failure() {
        let backend = FnBackend::constant("<think>hmm</think>");
        let t = run_rollout(&q("q"), &RolloutConfig::default(), &backend, &tools(), 0, 1)
            .unwrap()
            .trajectory;
        assert_eq!(t.termination, Termination::FormatFailure);
        assert!(grammar_violations(&t.segments).is_empty());
    }

    #[test]
    fn context_budget_overflow_is_format_failure() {
        let backend = FnBackend::constant(SEARCH);
        let cfg = RolloutConfig { context_budget: 20, ..Default::default() };
        let t = run_rollout(&q("q"), &cfg, &backend, &tools(), 0, 1).unwrap().trajectory;
        assert_eq!(t.termination, Termination::FormatFailure);
        assert!(t.violations[0].contains("context budget"));
    }

    #[test]
    fn backend_failure_discards_rollout() {
        let backend = ScriptedBackend::new();
        let err = run_rollout(&q("q"), &RolloutConfig::default(), &backend, &tools(), 0, 1).unwrap_err();
        assert!(matches!(err, RolloutError::Backend { turn: 0, .. }));
    }

    #[test]
    fn monitor_forces_cached_answer() {
        let stall = "<think>So the most likely answer is B. Verify again.</think>\n<tool_call>{\"name\":\"search\",\"arguments\":{\"query\":[\"pancreatic duct\"]}}</tool_call>";
        let backend = FnBackend::constant(stall);
        let cfg = RolloutConfig { monitor: Some(MonitorConfig::default()), ..Default::default() };
        let run = run_rollout(&q("q"), &cfg, &backend, &tools(), 0, 1).unwrap();
        let t = &run.trajectory;
        assert_eq!(t.termination, Termination::MonitorForced);
        assert_eq!(t.answer(), Some("B"));
        // Cached at turn 1, unchanged on turns 2-4.
        assert_eq!(t.turn_count, 3);
        let last = run.monitor_events.last().unwrap();
        assert_eq!((last.turn, last.action), (4, MonitorAction::Fired));
        assert!(grammar_violations(&t.segments).is_empty());
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..8).map(|i| rollout_seed(7, i)).collect();
        let mut uniq = seeds.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 8);
        assert_eq!(seeds[3], rollout_seed(7, 3));
        assert_ne!(rollout_seed(8, 3), seeds[3]);
    }
}
