//! Diagnostics over rollout logs: how answers change during a rollout,
//! where the agent reads, how often the monitor stops it, and which of two
//! answers is better supported.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::answer::NormalizedAnswer;
use crate::backend::{generate_with_retry, GenerateRequest, Message, ModelBackend};
use crate::oem::{MonitorEvent, ProposalExtractor, RuleExtractor};
use crate::reward::check_answer;
use crate::rollout::{extract_answer, GoldAnswer};
use crate::toolbelt::{parse_json_object, validate_tool_call, ToolRequest};
use crate::trajectory::{render, Delimiters, SegmentKind, Termination, Trajectory};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeBreakdown {
    pub init_correct_final_correct: usize,
    pub init_wrong_final_correct: usize,
    pub always_wrong: usize,
    pub init_correct_final_wrong: usize,
}

impl OutcomeBreakdown {
    pub fn total(&self) -> usize {
        self.init_correct_final_correct
            + self.init_wrong_final_correct
            + self.always_wrong
            + self.init_correct_final_wrong
    }
}

/// Text of each assistant turn, in order, with its tags.
pub fn assistant_turns(traj: &Trajectory) -> Vec<String> {
    let delims = Delimiters::default();
    let mut turns: BTreeMap<u32, String> = BTreeMap::new();
    for seg in traj.segments.iter().filter(|s| s.kind.is_model_generated()) {
        let tag = delims.tag(seg.kind).expect("model segments are tagged");
        turns.entry(seg.turn_index).or_default().push_str(&tag.wrap(&seg.text));
    }
    turns.into_values().collect()
}

/// First answer the trajectory proposes, found with the monitor's rules.
pub fn initial_answer(traj: &Trajectory, extractor: &dyn ProposalExtractor) -> Option<NormalizedAnswer> {
    assistant_turns(traj)
        .iter()
        .find_map(|t| extractor.propose(t))
        .map(|p| p.normalized)
}

/// Sorts every instance into one of four cells by whether its initial and
/// final answers are correct. Without a detectable initial proposal the
/// final answer stands in for it.
pub fn outcome_breakdown(logs: &[(Trajectory, GoldAnswer)]) -> OutcomeBreakdown {
    let mut out = OutcomeBreakdown::default();
    for (traj, gold) in logs {
        let fin = extract_answer(traj);
        let init = initial_answer(traj, &RuleExtractor).or_else(|| fin.clone());
        let correct = |a: &Option<NormalizedAnswer>| a.as_ref().is_some_and(|a| check_answer(a, gold));
        match (correct(&init), correct(&fin)) {
            (true, true) => out.init_correct_final_correct += 1,
            (false, true) => out.init_wrong_final_correct += 1,
            (false, false) => out.always_wrong += 1,
            (true, false) => out.init_correct_final_wrong += 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCategory {
    pub name: String,
    /// Registrable-domain suffixes, matched on label boundaries.
    pub domains: Vec<String>,
}

/// Ordered categories; a url lands in the first one that matches, else in
/// `other`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainTaxonomy {
    pub categories: Vec<DomainCategory>,
    pub other: String,
}

impl Default for DomainTaxonomy {
    fn default() -> Self {
        let cat = |name: &str, domains: &[&str]| DomainCategory {
            name: name.to_string(),
            domains: domains.iter().map(|d| d.to_string()).collect(),
        };
        Self {
            categories: vec![
                cat("Medical Literature", &["pubmed.ncbi.nlm.nih.gov", "pmc.ncbi.nlm.nih.gov", "nejm.org"]),
                cat("Clinical Reference", &["uptodate.com", "mayoclinic.org", "merckmanuals.com"]),
                cat("Medical Education", &["amboss.com", "medbullets.com"]),
                cat("Public Health", &["cdc.gov", "nih.gov"]),
                cat("Medical Community", &["researchgate.net", "forums.studentdoctor.net"]),
            ],
            other: "Other".to_string(),
        }
    }
}

fn domain_matches(host: &str, pattern: &str) -> bool {
    host == pattern || host.strip_suffix(pattern).is_some_and(|rest| rest.ends_with('.'))
}

impl DomainTaxonomy {
    pub fn categorize(&self, raw_url: &str) -> &str {
        let host = match url::Url::parse(raw_url) {
            Ok(u) => u.host_str().map(|h| h.trim_end_matches('.').to_ascii_lowercase()),
            Err(e) => {
                log::warn!("unparseable url {raw_url:?}: {e}");
                None
            }
        };
        host.and_then(|h| {
            self.categories
                .iter()
                .find(|c| c.domains.iter().any(|d| domain_matches(&h, &d.to_ascii_lowercase())))
        })
        .map_or(self.other.as_str(), |c| c.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub category: String,
    pub count: usize,
    pub share: f64,
}

/// Category shares in taxonomy order, skipping empty categories.
pub fn categorize_visits(urls: &[String], taxonomy: &DomainTaxonomy) -> Vec<CategoryShare> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for u in urls {
        *counts.entry(taxonomy.categorize(u)).or_default() += 1;
    }
    let total = urls.len() as f64;
    taxonomy
        .categories
        .iter()
        .map(|c| c.name.as_str())
        .chain(std::iter::once(taxonomy.other.as_str()))
        .filter_map(|name| {
            let count = *counts.get(name)?;
            Some(CategoryShare { category: name.to_string(), count, share: count as f64 / total })
        })
        .collect()
}

/// Urls the agent asked to visit, in call order.
pub fn visited_urls(traj: &Trajectory) -> Vec<String> {
    traj.tool_calls()
        .filter_map(|s| match validate_tool_call(&s.text) {
            Ok(ToolRequest::Visit(v)) => Some(v.urls),
            _ => None,
        })
        .flatten()
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OemStats {
    /// Rollouts the monitor stopped.
    pub triggered: usize,
    /// Stopped rollouts whose forced answer is correct.
    pub correct_with_oem: usize,
    pub total: usize,
}

pub fn oem_stats(runs: &[(Trajectory, Vec<MonitorEvent>, GoldAnswer)]) -> OemStats {
    let mut stats = OemStats { total: runs.len(), ..Default::default() };
    for (traj, _events, gold) in runs {
        if traj.termination != Termination::MonitorForced {
            continue;
        }
        stats.triggered += 1;
        if extract_answer(traj).is_some_and(|a| check_answer(&a, gold)) {
            stats.correct_with_oem += 1;
        }
    }
    stats
}

pub const EVIDENCE_JUDGE_PROMPT: &str = r#"You are an expert evaluator for medical question answering systems. Your task is to judge which model provides **MORE COMPLETE EVIDENCE** to support its answer.

**Question**
{question}

**Model A (Original Model) -- Single-turn reasoning**
{original_evidence}

**Model B (RL Model) -- Multi-turn with web search**
{rl_evidence}

**Evaluation Criteria**
Consider the following aspects when judging evidence completeness:
1. **Breadth of Sources**: Does the model cite multiple authoritative sources (medical textbooks, clinical guidelines, research papers)?
2. **Depth of Explanation**: Does the model explain the underlying medical mechanisms, not just state facts?
3. **Clinical Relevance**: Does the model provide clinically relevant details (dosages, contraindications, diagnostic criteria)?
4. **Verification**: Does the model verify its claims with external evidence?
5. **Reasoning Chain**: Is the logical chain from evidence to conclusion clear and complete?

**Instructions**
- Model A uses internal knowledge with detailed reasoning in a single turn.
- Model B uses web search to find and cite external sources across multiple turns.
- Judge based on **EVIDENCE COMPLETENESS**, not just answer correctness (both got the correct answer).
- Consider both quality and quantity of supporting evidence.

**Response Format**
Respond with a JSON object:
{ "winner": "A" or "B", "reason": "Brief explanation (1-2 sentences)" }
Only output the JSON, nothing else."#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceVerdict {
    pub winner: Winner,
    pub reason: String,
}

/// One instance both models answered correctly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePair {
    pub question: String,
    pub original_evidence: String,
    pub rl_evidence: String,
}

impl EvidencePair {
    /// The pair with A and B swapped.
    pub fn swapped(&self) -> Self {
        Self {
            question: self.question.clone(),
            original_evidence: self.rl_evidence.clone(),
            rl_evidence: self.original_evidence.clone(),
        }
    }
}

/// The model-written part of a trajectory, as the judge sees it.
pub fn evidence_text(traj: &Trajectory) -> String {
    let mut t = traj.clone();
    t.segments.retain(|s| s.kind != SegmentKind::Input);
    render(&t).trim().to_string()
}

pub fn evidence_prompt(pair: &EvidencePair) -> String {
    EVIDENCE_JUDGE_PROMPT
        .replace("{question}", &pair.question)
        .replace("{original_evidence}", &pair.original_evidence)
        .replace("{rl_evidence}", &pair.rl_evidence)
}

/// Asks `judge` which side carries more complete evidence. A verdict that
/// cannot be parsed is retried once, then reported as undecided.
pub fn judge_evidence(pair: &EvidencePair, judge: &dyn ModelBackend) -> EvidenceVerdict {
    #[derive(Deserialize)]
    struct Raw {
        winner: String,
        #[serde(default)]
        reason: String,
    }
    let messages = [Message::user(evidence_prompt(pair))];
    let mut last = String::new();
    for _ in 0..2 {
        match generate_with_retry(judge, &GenerateRequest::new(&messages), 2) {
            Ok(reply) => {
                let parsed = parse_json_object::<Raw>(&reply).and_then(|r| {
                    let w = match r.winner.trim().to_ascii_uppercase().as_str() {
                        "A" => Winner::A,
                        "B" => Winner::B,
                        _ => return None,
                    };
                    Some(EvidenceVerdict { winner: w, reason: r.reason })
                });
                match parsed {
                    Some(v) => return v,
                    None => last = format!("unparseable verdict: {}", reply.chars().take(120).collect::<String>()),
                }
            }
            Err(e) => last = e.to_string(),
        }
    }
    EvidenceVerdict { winner: Winner::Undecided, reason: last }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceTally {
    pub a: usize,
    pub b: usize,
    /// Excluded from the comparison.
    pub undecided: usize,
}

pub fn tally(verdicts: &[EvidenceVerdict]) -> EvidenceTally {
    let mut t = EvidenceTally::default();
    for v in verdicts {
        match v.winner {
            Winner::A => t.a += 1,
            Winner::B => t.b += 1,
            Winner::Undecided => t.undecided += 1,
        }
    }
    t
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub outcomes: OutcomeBreakdown,
    pub visits: Vec<CategoryShare>,
    pub oem: OemStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<EvidenceTally>,
}

impl AnalysisReport {
    /// Plain-text tables.
    pub fn to_table(&self) -> String {
        let o = &self.outcomes;
        let total = o.total().max(1) as f64;
        let mut s = String::from("Answer outcomes\n");
        for (label, n) in [
            ("initial correct, final correct", o.init_correct_final_correct),
            ("initial wrong, final correct", o.init_wrong_final_correct),
            ("always wrong", o.always_wrong),
            ("initial correct, final wrong", o.init_correct_final_wrong),
        ] {
            let _ = writeln!(s, "  {label:<32} {n:>6} {:>6.1}%", 100.0 * n as f64 / total);
        }
        let _ = writeln!(s, "  {:<32} {:>6}", "total", o.total());
        s.push_str("\nVisited domains\n");
        if self.visits.is_empty() {
            s.push_str("  (no visits)\n");
        }
        for v in &self.visits {
            let _ = writeln!(s, "  {:<32} {:>6} {:>6.1}%", v.category, v.count, 100.0 * v.share);
        }
        let _ = write!(
            s,
            "\nMonitor\n  {:<32} {:>6} / {}\n  {:<32} {:>6}\n",
            "triggered", self.oem.triggered, self.oem.total, "correct when triggered", self.oem.correct_with_oem
        );
        if let Some(e) = &self.evidence {
            let _ = write!(
                s,
                "\nEvidence completeness\n  {:<32} {:>6}\n  {:<32} {:>6}\n  {:<32} {:>6}\n",
                "model A", e.a, "model B", e.b, "undecided", e.undecided
            );
        }
        s
    }
}
