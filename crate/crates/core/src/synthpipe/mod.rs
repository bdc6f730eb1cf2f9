//! Multi-hop question synthesis and training-data curation.
//!
//! A chain is a web-grounded random walk over medical entities. Its
//! entities are described without their names and composed into one
//! question whose answer is the last entity. Difficulty filters and
//! rejection sampling then select training data from agent trials.

mod llm;
mod world;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{generate_with_retry, CallContext, GenerateRequest, Message, ModelBackend, Sampling};
use crate::reward::check_answer;
use crate::rollout::{extract_answer, rollout_seed, run_rollout, Question, RolloutConfig};
use crate::toolbelt::{SearchRequest, Toolbelt};
use crate::trajectory::{
    compute_loss_mask, validate_format_with, FormatLimits, LossMask, Termination, Tokenizer,
    TokenSpanMap, Trajectory,
};

pub use llm::{LlmSynth, COMPOSE_PROMPT, DESCRIBE_PROMPT, NEXT_HOP_PROMPT, QUALITY_PROMPT};
pub use world::{TableSynth, WorldEntity};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("synthesis backend failed: {0}")]
    Backend(String),
    #[error("unparseable backend output: {0}")]
    Unparseable(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("hop target {target} outside [{min}, {max}]")]
    HopTarget { target: u32, min: u32, max: u32 },
    #[error("no source for {0:?} was reachable")]
    Unreachable(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ComposeError {
    #[error("question leaked {leaked:?} on all {attempts} attempts")]
    RejectedSample { attempts: u32, leaked: Vec<String> },
    #[error("cannot compose from a short chain")]
    ShortChain,
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub name: String,
    /// Consolidated facts from the sources.
    pub summary: String,
    pub sources: Vec<String>,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl EntityNode {
    fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str())
            .chain(self.aliases.iter().map(String::as_str))
            .filter(|n| !n.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLink {
    pub relation: String,
    /// Why the relation holds; always cites a source of the link's
    /// endpoints.
    pub rationale: String,
    pub source_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicalChain {
    pub nodes: Vec<EntityNode>,
    pub links: Vec<ChainLink>,
    pub hops: u32,
    /// The walk ran out of viable next hops before its target.
    #[serde(default)]
    pub short: bool,
}

impl MedicalChain {
    pub fn terminal(&self) -> &EntityNode {
        self.nodes.last().expect("chains have a seed node")
    }

    /// Invariant violations, empty for a well-formed chain.
    pub fn violations(&self, bounds: &SynthBounds) -> Vec<String> {
        let mut out = Vec::new();
        if self.links.len() + 1 != self.nodes.len() {
            out.push(format!("{} links for {} nodes", self.links.len(), self.nodes.len()));
        }
        if self.hops as usize != self.links.len() {
            out.push(format!("hops {} but {} links", self.hops, self.links.len()));
        }
        if !self.short && !(bounds.min_hops..=bounds.max_hops).contains(&self.hops) {
            out.push(format!("hops {} outside [{}, {}]", self.hops, bounds.min_hops, bounds.max_hops));
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.name.to_lowercase()) {
                out.push(format!("repeated node {:?}", n.name));
            }
            if n.summary.trim().is_empty() {
                out.push(format!("empty summary for {:?}", n.name));
            }
        }
        for (i, n) in self.nodes.iter().enumerate().skip(1) {
            if n.sources.is_empty() {
                out.push(format!("node {i} has no sources"));
            }
        }
        for (i, link) in self.links.iter().enumerate() {
            let cited = self.nodes[i]
                .sources
                .iter()
                .chain(&self.nodes[i + 1].sources)
                .any(|u| link.rationale.contains(u.as_str()));
            if !cited {
                out.push(format!("link {} cites no source", i + 1));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub keep: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedSearchQA {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub hops: u32,
    pub chain: MedicalChain,
    pub obfuscated_descriptions: Vec<String>,
    /// Composition attempts used, including the accepted one.
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityVerdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    ToolFree,
    SingleTool,
    FullAgent,
}

/// Outcomes of k independent attempts at one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub question_id: String,
    pub mode: TrialMode,
    pub outcomes: Vec<bool>,
}

impl TrialRecord {
    pub fn successes(&self) -> usize {
        self.outcomes.iter().filter(|&&o| o).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthBounds {
    pub min_hops: u32,
    pub max_hops: u32,
    pub compose_attempts: u32,
    /// Extra next-hop proposals requested when none is viable.
    pub next_hop_retries: u32,
    pub sources_per_entity: usize,
}

impl Default for SynthBounds {
    fn default() -> Self {
        Self { min_hops: 3, max_hops: 8, compose_attempts: 3, next_hop_retries: 1, sources_per_entity: 2 }
    }
}

impl SynthBounds {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_hops < 1 || self.min_hops > self.max_hops {
            return Err(format!("hop bounds [{}, {}] are empty", self.min_hops, self.max_hops));
        }
        if self.compose_attempts < 1 || self.sources_per_entity < 1 {
            return Err("compose_attempts and sources_per_entity must be at least 1".into());
        }
        Ok(())
    }
}

/// Source text handed to the backend when describing an entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDoc {
    pub url: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityFacts {
    pub summary: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    pub relation: String,
    pub rationale: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    /// One anonymized description per chain node.
    pub descriptions: Vec<String>,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityJudgement {
    /// Soundness of each link, in chain order.
    pub links_sound: Vec<bool>,
    pub unique_answer: bool,
    pub reason: String,
}

/// The model-dependent steps of synthesis.
pub trait SynthBackend: Send + Sync {
    fn describe_entity(&self, name: &str, sources: &[SourceDoc]) -> Result<EntityFacts, SynthError>;
    /// Candidate next hops from the last node of `chain`.
    fn next_hops(&self, chain: &[EntityNode]) -> Result<Vec<Candidate>, SynthError>;
    /// `attempt` counts from 0 and grows after each leaked question.
    fn compose(&self, chain: &MedicalChain, attempt: u32) -> Result<Composition, SynthError>;
    fn judge_quality(&self, qa: &MedSearchQA) -> Result<QualityJudgement, SynthError>;
}

fn gather_sources(name: &str, tools: &Toolbelt, limit: usize) -> Vec<SourceDoc> {
    let req = SearchRequest { queries: vec![name.to_string()] };
    let hits = tools
        .search(&req)
        .into_iter()
        .flat_map(|r| r.outcome.unwrap_or_default())
        .collect::<Vec<_>>();
    let mut seen = BTreeSet::new();
    hits.into_iter()
        .filter(|h| seen.insert(h.url.clone()))
        .filter_map(|h| match tools.fetch_cached(&h.url) {
            Ok(content) => Some(SourceDoc { url: h.url, content }),
            Err(e) => {
                log::debug!("source {} for {name:?} skipped: {e}", h.url);
                None
            }
        })
        .take(limit)
        .collect()
}

fn describe(
    name: &str,
    sources: Vec<SourceDoc>,
    backend: &dyn SynthBackend,
) -> Result<EntityNode, SynthError> {
    let facts = backend.describe_entity(name, &sources)?;
    if facts.summary.trim().is_empty() {
        return Err(SynthError::Unparseable(format!("empty summary for {name:?}")));
    }
    Ok(EntityNode {
        name: name.to_string(),
        summary: facts.summary,
        sources: sources.into_iter().map(|s| s.url).collect(),
        aliases: facts.aliases,
    })
}

/// Walks from `seed` until the chain has `hop_target` links. Candidates are
/// ranked by score, ties broken by name; entities already in the chain
/// (by name or alias) and entities without reachable sources are skipped.
/// When no candidate is viable the partial chain comes back with `short`
/// set.
pub fn build_chain(
    seed: &str,
    hop_target: u32,
    bounds: &SynthBounds,
    backend: &dyn SynthBackend,
    tools: &Toolbelt,
) -> Result<MedicalChain, ChainError> {
    if !(bounds.min_hops..=bounds.max_hops).contains(&hop_target) {
        return Err(ChainError::HopTarget { target: hop_target, min: bounds.min_hops, max: bounds.max_hops });
    }
    let sources = gather_sources(seed, tools, bounds.sources_per_entity);
    if sources.is_empty() {
        return Err(ChainError::Unreachable(seed.to_string()));
    }
    let mut nodes = vec![describe(seed, sources, backend)?];
    let mut links = Vec::new();
    let mut taken: BTreeSet<String> = nodes[0].names().map(str::to_lowercase).collect();

    'walk: while (links.len() as u32) < hop_target {
        for _ in 0..=bounds.next_hop_retries {
            let mut candidates = backend.next_hops(&nodes)?;
            candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
            for c in candidates {
                if c.name.trim().is_empty() || taken.contains(&c.name.to_lowercase()) {
                    continue;
                }
                let sources = gather_sources(&c.name, tools, bounds.sources_per_entity);
                if sources.is_empty() {
                    continue;
                }
                let node = describe(&c.name, sources, backend)?;
                if node.aliases.iter().any(|a| taken.contains(&a.to_lowercase())) {
                    continue;
                }
                let prev = nodes.last().expect("seed present");
                let cited = prev.sources.iter().chain(&node.sources).any(|u| c.rationale.contains(u.as_str()));
                let source_url = node.sources[0].clone();
                let rationale = if cited {
                    c.rationale
                } else {
                    format!("{} [source: {source_url}]", c.rationale.trim())
                };
                taken.extend(node.names().map(str::to_lowercase));
                links.push(ChainLink { relation: c.relation, rationale, source_url });
                nodes.push(node);
                continue 'walk;
            }
        }
        break;
    }
    let hops = links.len() as u32;
    Ok(MedicalChain { nodes, links, hops, short: hops < hop_target })
}

/// Chain names and aliases that occur in `question`, case-insensitively.
pub fn leaked_terms(question: &str, chain: &MedicalChain) -> Vec<String> {
    let q = question.to_lowercase();
    let mut out: Vec<String> = chain
        .nodes
        .iter()
        .flat_map(|n| n.names())
        .filter(|name| q.contains(&name.to_lowercase()))
        .map(str::to_string)
        .collect();
    out.dedup();
    out
}

/// Anonymizes the chain into one question answered by its last entity,
/// regenerating while the question names any chain entity.
pub fn obfuscate_and_compose(
    id: &str,
    chain: &MedicalChain,
    bounds: &SynthBounds,
    backend: &dyn SynthBackend,
) -> Result<MedSearchQA, ComposeError> {
    if chain.short {
        return Err(ComposeError::ShortChain);
    }
    let mut leaked = Vec::new();
    for attempt in 0..bounds.compose_attempts {
        let comp = backend.compose(chain, attempt)?;
        if comp.descriptions.len() != chain.nodes.len() {
            return Err(SynthError::Unparseable(format!(
                "{} descriptions for {} nodes",
                comp.descriptions.len(),
                chain.nodes.len()
            ))
            .into());
        }
        leaked = leaked_terms(&comp.question, chain);
        if leaked.is_empty() {
            return Ok(MedSearchQA {
                id: id.to_string(),
                question: comp.question,
                answer: chain.terminal().name.clone(),
                hops: chain.hops,
                chain: chain.clone(),
                obfuscated_descriptions: comp.descriptions,
                attempts: attempt + 1,
                quality: None,
            });
        }
        log::debug!("{id}: attempt {} leaked {leaked:?}", attempt + 1);
    }
    Err(ComposeError::RejectedSample { attempts: bounds.compose_attempts, leaked })
}

/// Keeps `qa` when the judge finds every link sound and the answer unique.
/// Output that cannot be parsed is retried once, then rejected.
pub fn quality_filter(qa: &MedSearchQA, judge: &dyn SynthBackend) -> QualityVerdict {
    let mut last_err = String::new();
    for _ in 0..2 {
        match judge.judge_quality(qa) {
            Ok(j) => {
                if let Some(i) = j.links_sound.iter().position(|ok| !ok) {
                    return QualityVerdict { keep: false, reason: format!("link {} unsound: {}", i + 1, j.reason) };
                }
                if j.links_sound.len() != qa.chain.links.len() {
                    return QualityVerdict {
                        keep: false,
                        reason: format!("judge rated {} of {} links", j.links_sound.len(), qa.chain.links.len()),
                    };
                }
                if !j.unique_answer {
                    return QualityVerdict { keep: false, reason: format!("answer not unique: {}", j.reason) };
                }
                return QualityVerdict { keep: true, reason: j.reason };
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    QualityVerdict { keep: false, reason: format!("judge output unusable: {last_err}") }
}

/// pass@k filter for SFT: keeps questions answered correctly at most once.
pub fn pass_at_k_sft_filter(trials: &TrialRecord) -> bool {
    trials.successes() <= 1
}

/// Stage reached by a question in RL curation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurationOutcome {
    Kept,
    /// Accuracy without tools above one half.
    DroppedStage1,
    /// Accuracy with one tool outside {0, 1/4}.
    DroppedStage2,
    /// No trial record for a stage the question reached.
    MissingTrials,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationDecision {
    pub question_id: String,
    pub outcome: CurationOutcome,
    pub stage1_successes: Option<usize>,
    pub stage2_successes: Option<usize>,
}

fn stage1_keeps(r: &TrialRecord) -> bool {
    // accuracy > 1/2 drops
    2 * r.successes() <= r.outcomes.len()
}

fn stage2_keeps(r: &TrialRecord) -> bool {
    // accuracy in {0, 1/4}
    let s = r.successes();
    s == 0 || 4 * s == r.outcomes.len()
}

/// Two-stage RL curation over `pool`, in pool order.
pub fn curate_rl(
    pool: &[String],
    stage1: &[TrialRecord],
    stage2: &[TrialRecord],
) -> Vec<CurationDecision> {
    let find = |records: &[TrialRecord], id: &str| records.iter().find(|r| r.question_id == id).cloned();
    pool.iter()
        .map(|id| {
            let s1 = find(stage1, id);
            let s2 = find(stage2, id);
            let outcome = match (&s1, &s2) {
                (None, _) => CurationOutcome::MissingTrials,
                (Some(r1), _) if !stage1_keeps(r1) => CurationOutcome::DroppedStage1,
                (Some(_), None) => CurationOutcome::MissingTrials,
                (Some(_), Some(r2)) if !stage2_keeps(r2) => CurationOutcome::DroppedStage2,
                _ => CurationOutcome::Kept,
            };
            CurationDecision {
                question_id: id.clone(),
                outcome,
                stage1_successes: s1.map(|r| r.successes()),
                stage2_successes: s2.map(|r| r.successes()),
            }
        })
        .collect()
}

/// Runs `k` trials of `question` in `mode`. Tool-free trials are single
/// calls without tools; single-tool trials refuse `visit`. A trial whose
/// backend call fails counts as a miss.
pub fn run_trials(
    question: &Question,
    mode: TrialMode,
    k: usize,
    cfg: &RolloutConfig,
    backend: &dyn ModelBackend,
    tools: &Toolbelt,
    seed: u64,
) -> TrialRecord {
    let outcomes = (0..k)
        .map(|i| {
            let s = rollout_seed(seed, i);
            let answer = match mode {
                TrialMode::ToolFree => {
                    let messages = [Message::user(&question.question)];
                    let req = GenerateRequest {
                        messages: &messages,
                        sampling: Sampling { temperature: cfg.temperature, max_tokens: cfg.max_tokens, seed: s },
                        context: CallContext { question_id: question.id.clone(), rollout_index: i, turn_index: 0 },
                    };
                    generate_with_retry(backend, &req, 2).ok().map(|text| {
                        let (blocks, _, _) = crate::trajectory::scan_blocks(&text, &Default::default());
                        let answer = blocks
                            .iter()
                            .find(|b| b.kind == crate::trajectory::SegmentKind::Answer)
                            .map(|b| b.text.clone())
                            .unwrap_or(text);
                        crate::answer::normalize_answer(&answer)
                    })
                }
                TrialMode::SingleTool | TrialMode::FullAgent => {
                    let restricted;
                    let belt = if mode == TrialMode::SingleTool {
                        let mut tc = tools.config();
                        tc.search_only = true;
                        restricted = tools.clone().with_config(tc);
                        &restricted
                    } else {
                        tools
                    };
                    run_rollout(question, cfg, backend, belt, i, s)
                        .ok()
                        .filter(|run| run.trajectory.termination != Termination::FormatFailure)
                        .and_then(|run| extract_answer(&run.trajectory))
                }
            };
            answer.is_some_and(|a| check_answer(&a, &question.gold))
        })
        .collect();
    TrialRecord { question_id: question.id.clone(), mode, outcomes }
}

/// A trajectory kept for supervised training, with its tokens and mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub question_id: String,
    pub rollout_index: usize,
    pub trajectory: Trajectory,
    pub tokens: Vec<String>,
    pub mask: LossMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSampling {
    pub question_id: String,
    pub kept: Vec<SftRecord>,
    pub sampled: usize,
    /// Nothing survived.
    pub unfilled: bool,
}

/// Samples `n_samples` rollouts and keeps the well-formed, correct ones
/// with at most `turn_cap` turns.
#[allow(clippy::too_many_arguments)]
pub fn rejection_sample_sft(
    question: &Question,
    n_samples: usize,
    turn_cap: u32,
    cfg: &RolloutConfig,
    limits: &FormatLimits,
    backend: &dyn ModelBackend,
    tools: &Toolbelt,
    tokenizer: &dyn Tokenizer,
    seed: u64,
) -> SftSampling {
    let kept: Vec<SftRecord> = (0..n_samples)
        .filter_map(|i| {
            let run = run_rollout(question, cfg, backend, tools, i, rollout_seed(seed, i))
                .map_err(|e| log::warn!("{}: sample {i} discarded: {e}", question.id))
                .ok()?;
            let t = run.trajectory;
            let format_ok = validate_format_with(&t, limits, tokenizer).pass;
            let accurate = extract_answer(&t).is_some_and(|a| check_answer(&a, &question.gold));
            if !(format_ok && accurate && t.turn_count <= turn_cap) {
                return None;
            }
            let spans = TokenSpanMap::build(&t, tokenizer);
            let mask = compute_loss_mask(&t, &spans).ok()?;
            Some(SftRecord {
                question_id: question.id.clone(),
                rollout_index: i,
                tokens: spans.tokens,
                mask,
                trajectory: t,
            })
        })
        .collect();
    SftSampling {
        question_id: question.id.clone(),
        unfilled: kept.is_empty(),
        sampled: n_samples,
        kept,
    }
}

/// Why a corpus job produced no question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub job: usize,
    pub seed_entity: String,
    pub hop_target: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub questions: Vec<MedSearchQA>,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub target: usize,
    /// Jobs tried per requested question before giving up.
    pub max_jobs_per_question: usize,
    pub rng_seed: u64,
    pub bounds: SynthBounds,
    pub quality_check: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { target: 10, max_jobs_per_question: 4, rng_seed: 0, bounds: SynthBounds::default(), quality_check: true }
    }
}

/// Hop target and seed entity of corpus job `job`; a pure function of the
/// job index so parallel scheduling cannot change the corpus.
pub fn job_plan(job: usize, seeds: &[String], cfg: &CorpusConfig) -> (String, u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed(cfg.rng_seed, job));
    let hop = rng.random_range(cfg.bounds.min_hops..=cfg.bounds.max_hops);
    let seed = seeds[rng.random_range(0..seeds.len())].clone();
    (seed, hop)
}

fn run_job(
    job: usize,
    seeds: &[String],
    cfg: &CorpusConfig,
    backend: &dyn SynthBackend,
    tools: &Toolbelt,
) -> Result<MedSearchQA, Rejection> {
    let (seed, hop_target) = job_plan(job, seeds, cfg);
    let reject = |reason: String| Rejection { job, seed_entity: seed.clone(), hop_target, reason };
    let chain = build_chain(&seed, hop_target, &cfg.bounds, backend, tools).map_err(|e| reject(e.to_string()))?;
    if chain.short {
        return Err(reject(format!("short chain: {} of {hop_target} hops", chain.hops)));
    }
    let mut qa = obfuscate_and_compose(&format!("synth-{job:05}"), &chain, &cfg.bounds, backend)
        .map_err(|e| reject(e.to_string()))?;
    if cfg.quality_check {
        let verdict = quality_filter(&qa, backend);
        if !verdict.keep {
            return Err(reject(verdict.reason));
        }
        qa.quality = Some(verdict);
    }
    Ok(qa)
}

/// Synthesizes up to `cfg.target` questions. Jobs run in parallel in
/// batches; output order is job order, so identical inputs give identical
/// corpora.
pub fn synthesize_corpus(
    seeds: &[String],
    cfg: &CorpusConfig,
    backend: &dyn SynthBackend,
    tools: &Toolbelt,
) -> Result<Corpus, String> {
    cfg.bounds.validate()?;
    if seeds.is_empty() {
        return Err("no seed entities".into());
    }
    let max_jobs = cfg.target.saturating_mul(cfg.max_jobs_per_question.max(1));
    let mut corpus = Corpus { questions: Vec::new(), rejections: Vec::new() };
    let mut next = 0;
    while corpus.questions.len() < cfg.target && next < max_jobs {
        let batch = (cfg.target - corpus.questions.len()).min(max_jobs - next);
        let results: Vec<_> = (next..next + batch)
            .into_par_iter()
            .map(|job| run_job(job, seeds, cfg, backend, tools))
            .collect();
        next += batch;
        for r in results {
            match r {
                Ok(qa) => corpus.questions.push(qa),
                Err(rej) => corpus.rejections.push(rej),
            }
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests;
