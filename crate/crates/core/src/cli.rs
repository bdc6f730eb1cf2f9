//! Engine configuration and the `dr-engine` subcommands.
//!
//! Every subcommand reads and writes JSON-lines files (one JSON document
//! for analysis output), so runs can be diffed and replayed. Secrets are
//! read from environment variables named in the config, never from the
//! file itself.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    categorize_visits, judge_evidence, oem_stats, outcome_breakdown, tally, visited_urls, AnalysisReport,
    DomainTaxonomy, EvidencePair,
};
use crate::backend::{ChatCompletionsBackend, ModelBackend, ScriptedBackend};
use crate::jsonl;
use crate::reward::{export_rl, score_group, RewardConfig, RewardReport};
use crate::rollout::{run_group, GroupRollout, Question, RolloutConfig};
use crate::synthpipe::{
    curate_rl, pass_at_k_sft_filter, rejection_sample_sft, run_trials, synthesize_corpus, CorpusConfig, LlmSynth,
    SynthBackend, TableSynth, TrialMode, TrialRecord,
};
use crate::toolbelt::mock::{ExtractiveSummarizer, MockWeb};
use crate::toolbelt::{
    tool_schemas, validate_tool_call, PageCache, ReaderFetcher, SerperSearch, TokenBucket, ToolConfig, Toolbelt,
};
use crate::trajectory::{FormatLimits, Trajectory, WhitespaceTokenizer};

/// Process exit status of a subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Partial = 1,
    BadConfig = 2,
    MissingInput = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn status(&self) -> Status {
        match self {
            CliError::Config(_) => Status::BadConfig,
            CliError::MissingInput(_) => Status::MissingInput,
            CliError::Io(_) => Status::Partial,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingInput(_) => "missing_input",
            CliError::Io(_) => "io",
        }
    }

    /// One-line JSON summary for stderr.
    pub fn summary(&self) -> String {
        serde_json::json!({
            "status": "error",
            "code": self.status() as i32,
            "kind": self.kind(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

/// An item a subcommand could not process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub item: String,
    pub error: String,
}

/// What a subcommand did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub failures: Vec<ItemError>,
    /// Extra text for stdout.
    #[serde(skip)]
    pub stdout: String,
}

impl Outcome {
    pub fn status(&self) -> Status {
        if self.failures.is_empty() {
            Status::Ok
        } else {
            Status::Partial
        }
    }

    /// One-line JSON summary; goes to stderr when items failed.
    pub fn summary(&self) -> String {
        serde_json::json!({
            "status": if self.failures.is_empty() { "ok" } else { "partial" },
            "code": self.status() as i32,
            "written": self.written,
            "failures": self.failures,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Replies replayed from a JSON-lines script.
    Scripted { script: PathBuf },
    /// An OpenAI-compatible chat-completions server.
    Chat {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SummarizerConfig {
    /// Offline sentence extraction.
    Extractive,
    Chat {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ToolsConfig {
    /// Offline pages from a JSON-lines file.
    Mock {
        web: PathBuf,
        #[serde(default)]
        chunk_tokens: Option<usize>,
    },
    Live {
        search_endpoint: String,
        search_key_env: String,
        reader_endpoint: String,
        #[serde(default)]
        reader_key_env: Option<String>,
        #[serde(default = "default_results")]
        results: usize,
        #[serde(default = "default_rate")]
        requests_per_second: f64,
        #[serde(default)]
        chunk_tokens: Option<usize>,
    },
}

fn default_results() -> usize {
    10
}

fn default_rate() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthWorld {
    /// A seeded random entity graph served offline.
    RandomWorld { world_seed: u64, entities: usize },
    /// The bundled rhabdomyosarcoma example world.
    Rhabdomyosarcoma,
    /// The configured chat model and live tools.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub world: SynthWorld,
    /// Seed entities; empty means the world's first twenty entities.
    pub seeds: Vec<String>,
    pub corpus: CorpusConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            world: SynthWorld::RandomWorld { world_seed: 0, entities: 200 },
            seeds: Vec::new(),
            corpus: CorpusConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    /// Trials per question for every filter.
    pub k: usize,
    /// Rejection-sampling rollouts per question.
    pub sft_samples: usize,
    /// Most tool turns a kept SFT trajectory may take.
    pub turn_cap: u32,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self { k: 4, sft_samples: 4, turn_cap: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub policy: BackendConfig,
    #[serde(default)]
    pub judge: Option<BackendConfig>,
    #[serde(default = "default_summarizer")]
    pub summarizer: SummarizerConfig,
    pub tools: ToolsConfig,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub curation: CurationConfig,
    #[serde(default)]
    pub taxonomy: Option<DomainTaxonomy>,
    /// Directory relative paths resolve against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_summarizer() -> SummarizerConfig {
    SummarizerConfig::Extractive
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
        let mut cfg: EngineConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.rollout.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.reward.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.synth.corpus.bounds.validate().map_err(CliError::Config)?;
        if self.curation.k < 1 || self.curation.sft_samples < 1 {
            return Err(CliError::Config("curation.k and curation.sft_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.resolve(&self.output_dir).join(name)
    }

    pub fn format_limits(&self) -> FormatLimits {
        FormatLimits { max_turns: self.rollout.max_turns, context_budget: self.rollout.context_budget }
    }

    /// Environment variables the config needs that are unset.
    pub fn missing_secrets(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in std::iter::once(&self.policy).chain(self.judge.as_ref()) {
            if let BackendConfig::Chat { api_key_env: Some(v), .. } = b {
                names.push(v.clone());
            }
        }
        if let SummarizerConfig::Chat { api_key_env: Some(v), .. } = &self.summarizer {
            names.push(v.clone());
        }
        if let ToolsConfig::Live { search_key_env, reader_key_env, .. } = &self.tools {
            names.push(search_key_env.clone());
            names.extend(reader_key_env.clone());
        }
        names.sort();
        names.dedup();
        names.retain(|n| std::env::var(n).map_or(true, |v| v.is_empty()));
        names
    }
}

fn secret(name: &Option<String>) -> Result<Option<String>, CliError> {
    match name {
        None => Ok(None),
        Some(n) => std::env::var(n)
            .map(Some)
            .map_err(|_| CliError::Config(format!("environment variable {n} is not set"))),
    }
}

/// Builds a model backend from its config.
pub fn build_backend(cfg: &EngineConfig, b: &BackendConfig) -> Result<Arc<dyn ModelBackend>, CliError> {
    match b {
        BackendConfig::Scripted { script } => {
            let path = cfg.resolve(script);
            if !path.exists() {
                return Err(CliError::MissingInput(path.display().to_string()));
            }
            Ok(Arc::new(ScriptedBackend::load(&path).map_err(|e| CliError::Config(e.to_string()))?))
        }
        BackendConfig::Chat { endpoint, model, api_key_env } => Ok(Arc::new(
            ChatCompletionsBackend::new(endpoint, model, secret(api_key_env)?)
                .map_err(|e| CliError::Config(e.to_string()))?,
        )),
    }
}

/// Builds the toolbelt from its config.
pub fn build_tools(cfg: &EngineConfig) -> Result<Toolbelt, CliError> {
    let summarizer: Arc<dyn ModelBackend> = match &cfg.summarizer {
        SummarizerConfig::Extractive => Arc::new(ExtractiveSummarizer),
        SummarizerConfig::Chat { endpoint, model, api_key_env } => Arc::new(
            ChatCompletionsBackend::new(endpoint, model, secret(api_key_env)?)
                .map_err(|e| CliError::Config(e.to_string()))?,
        ),
    };
    let (belt, chunk) = match &cfg.tools {
        ToolsConfig::Mock { web, chunk_tokens } => {
            let path = cfg.resolve(web);
            let web = MockWeb::load(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CliError::MissingInput(path.display().to_string()),
                _ => CliError::Config(format!("{}: {e}", path.display())),
            })?;
            (Toolbelt::mock(Arc::new(web)), *chunk_tokens)
        }
        ToolsConfig::Live {
            search_endpoint,
            search_key_env,
            reader_endpoint,
            reader_key_env,
            results,
            requests_per_second,
            chunk_tokens,
        } => {
            let key = secret(&Some(search_key_env.clone()))?.unwrap_or_default();
            let bucket = || TokenBucket::new(requests_per_second.ceil().max(1.0) as u32, *requests_per_second);
            let search = SerperSearch::new(search_endpoint, key, *results, bucket())
                .map_err(|e| CliError::Config(e.to_string()))?;
            let reader = ReaderFetcher::new(reader_endpoint, secret(reader_key_env)?, bucket())
                .map_err(|e| CliError::Config(e.to_string()))?;
            let belt = Toolbelt::new(Arc::new(search), Arc::new(reader), summarizer.clone(), Arc::new(PageCache::new()));
            (belt, *chunk_tokens)
        }
    };
    let mut tc = ToolConfig::default();
    if let Some(c) = chunk {
        tc.chunk_tokens = c;
    }
    Ok(belt.with_summarizer(summarizer).with_config(tc))
}

#[derive(Debug, Parser)]
#[command(name = "dr-engine", version, about = "Research-agent rollouts, rewards, data synthesis and analyses")]
pub struct Cli {
    /// Engine config (TOML).
    #[arg(long, short, global = true, default_value = "dr-engine.toml")]
    pub config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct QuestionsArg {
    /// Question file (JSON lines).
    #[arg(long)]
    pub questions: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a multi-hop question corpus.
    Synth,
    /// Run the pass@k SFT filter and the two-stage RL filter.
    Curate(QuestionsArg),
    /// Sample a rollout group per question.
    Rollout(QuestionsArg),
    /// Score rollout groups, or bare trajectories grouped by question.
    Score {
        /// Group file from `rollout`, or a trajectory file.
        #[arg(long)]
        input: PathBuf,
        /// Needed when `input` holds bare trajectories.
        #[arg(long)]
        questions: Option<PathBuf>,
    },
    /// Rejection-sample SFT trajectories.
    ExportSft(QuestionsArg),
    /// Bundle scored groups with token masks for a policy-gradient trainer.
    ExportRl {
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        reports: PathBuf,
    },
    /// Outcome, domain, monitor and evidence analyses over rollout groups.
    Analyze {
        #[arg(long)]
        groups: PathBuf,
        /// Answer pairs for the evidence-completeness judge.
        #[arg(long)]
        evidence: Option<PathBuf>,
    },
    /// Print an analysis file as text tables.
    Report {
        #[arg(long)]
        analysis: PathBuf,
    },
    /// Probe backends and tools and check the schema fixtures.
    Selfcheck,
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Vec<ItemError>), CliError> {
    if !path.exists() {
        return Err(CliError::MissingInput(path.display().to_string()));
    }
    let decoded = jsonl::read_file::<T>(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let errors = decoded
        .errors
        .iter()
        .map(|e| ItemError { item: format!("{}:{}", path.display(), e.line), error: e.message.clone() })
        .collect();
    Ok((decoded.records, errors))
}

fn write_records<T: Serialize>(path: &Path, records: &[T], out: &mut Outcome) -> Result<(), CliError> {
    jsonl::write_file(path, records).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    out.written.push(path.to_path_buf());
    Ok(())
}

fn write_text(path: &Path, text: &str, out: &mut Outcome) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    out.written.push(path.to_path_buf());
    Ok(())
}

/// Loads the config named by `cli`, applies overrides and runs the
/// subcommand.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let mut cfg = EngineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output_dir = absolute(dir)?;
    }
    run_command(&cfg, &cli.command.absolutized()?)
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

impl Command {
    /// Anchors path arguments at the working directory, so only paths
    /// inside the config file resolve against the config's directory.
    pub fn absolutized(&self) -> Result<Command, CliError> {
        let q = |a: &QuestionsArg| absolute(&a.questions).map(|questions| QuestionsArg { questions });
        let opt = |p: &Option<PathBuf>| p.as_deref().map(absolute).transpose();
        Ok(match self {
            Command::Synth => Command::Synth,
            Command::Selfcheck => Command::Selfcheck,
            Command::Curate(a) => Command::Curate(q(a)?),
            Command::Rollout(a) => Command::Rollout(q(a)?),
            Command::ExportSft(a) => Command::ExportSft(q(a)?),
            Command::Score { input, questions } => {
                Command::Score { input: absolute(input)?, questions: opt(questions)? }
            }
            Command::ExportRl { groups, reports } => {
                Command::ExportRl { groups: absolute(groups)?, reports: absolute(reports)? }
            }
            Command::Analyze { groups, evidence } => {
                Command::Analyze { groups: absolute(groups)?, evidence: opt(evidence)? }
            }
            Command::Report { analysis } => Command::Report { analysis: absolute(analysis)? },
        })
    }
}

pub fn run_command(cfg: &EngineConfig, command: &Command) -> Result<Outcome, CliError> {
    match command {
        Command::Synth => cmd_synth(cfg),
        Command::Curate(q) => cmd_curate(cfg, &q.questions),
        Command::Rollout(q) => cmd_rollout(cfg, &q.questions),
        Command::Score { input, questions } => cmd_score(cfg, input, questions.as_deref()),
        Command::ExportSft(q) => cmd_export_sft(cfg, &q.questions),
        Command::ExportRl { groups, reports } => cmd_export_rl(cfg, groups, reports),
        Command::Analyze { groups, evidence } => cmd_analyze(cfg, groups, evidence.as_deref()),
        Command::Report { analysis } => cmd_report(cfg, analysis),
        Command::Selfcheck => Ok(cmd_selfcheck(cfg)),
    }
}

fn cmd_synth(cfg: &EngineConfig) -> Result<Outcome, CliError> {
    let (backend, tools): (Box<dyn SynthBackend>, Toolbelt) = match &cfg.synth.world {
        SynthWorld::RandomWorld { world_seed, entities } => {
            let world = TableSynth::random(*world_seed, *entities);
            let tools = Toolbelt::mock(Arc::new(world.web()));
            (Box::new(world), tools)
        }
        SynthWorld::Rhabdomyosarcoma => {
            let world = TableSynth::rhabdomyosarcoma();
            let tools = Toolbelt::mock(Arc::new(world.web()));
            (Box::new(world), tools)
        }
        SynthWorld::Llm => (Box::new(LlmSynth::new(build_backend(cfg, &cfg.policy)?)), build_tools(cfg)?),
    };
    let seeds = if cfg.synth.seeds.is_empty() {
        match &cfg.synth.world {
            SynthWorld::Rhabdomyosarcoma => vec!["Childhood Rhabdomyosarcoma".to_string()],
            SynthWorld::RandomWorld { world_seed, entities } => TableSynth::random(*world_seed, *entities)
                .names()
                .take(20)
                .map(String::from)
                .collect(),
            SynthWorld::Llm => return Err(CliError::Config("synth.seeds is required for the llm world".into())),
        }
    } else {
        cfg.synth.seeds.clone()
    };
    let mut corpus_cfg = cfg.synth.corpus.clone();
    corpus_cfg.rng_seed = cfg.seed;
    let corpus = synthesize_corpus(&seeds, &corpus_cfg, backend.as_ref(), &tools).map_err(CliError::Config)?;
    let mut out = Outcome::default();
    write_records(&cfg.out_path("corpus.jsonl"), &corpus.questions, &mut out)?;
    write_records(&cfg.out_path("rejections.jsonl"), &corpus.rejections, &mut out)?;
    if corpus.questions.len() < corpus_cfg.target {
        out.failures.push(ItemError {
            item: "corpus".into(),
            error: format!("{} of {} questions synthesized", corpus.questions.len(), corpus_cfg.target),
        });
    }
    Ok(out)
}

fn load_questions(cfg: &EngineConfig, path: &Path, out: &mut Outcome) -> Result<Vec<Question>, CliError> {
    let (questions, errors) = read_records::<Question>(&cfg.resolve(path))?;
    out.failures.extend(errors);
    Ok(questions)
}

fn cmd_curate(cfg: &EngineConfig, questions: &Path) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let questions = load_questions(cfg, questions, &mut out)?;
    let backend = build_backend(cfg, &cfg.policy)?;
    let tools = build_tools(cfg)?;
    let k = cfg.curation.k;
    let trial = |q: &Question, mode: TrialMode, salt: u64| {
        run_trials(q, mode, k, &cfg.rollout, backend.as_ref(), &tools, cfg.seed ^ salt)
    };
    let single: Vec<TrialRecord> = questions.iter().map(|q| trial(q, TrialMode::SingleTool, 0)).collect();
    let tool_free: Vec<TrialRecord> = questions.iter().map(|q| trial(q, TrialMode::ToolFree, 1)).collect();
    let sft_pool: Vec<&Question> = questions
        .iter()
        .zip(&single)
        .filter(|(_, r)| pass_at_k_sft_filter(r))
        .map(|(q, _)| q)
        .collect();
    let ids: Vec<String> = questions.iter().map(|q| q.id.clone()).collect();
    let decisions = curate_rl(&ids, &tool_free, &single);
    let rl_pool: Vec<&Question> = questions
        .iter()
        .zip(&decisions)
        .filter(|(_, d)| d.outcome == crate::synthpipe::CurationOutcome::Kept)
        .map(|(q, _)| q)
        .collect();
    let trials: Vec<&TrialRecord> = tool_free.iter().chain(&single).collect();
    write_records(&cfg.out_path("trials.jsonl"), &trials, &mut out)?;
    write_records(&cfg.out_path("curation.jsonl"), &decisions, &mut out)?;
    write_records(&cfg.out_path("sft_pool.jsonl"), &sft_pool, &mut out)?;
    write_records(&cfg.out_path("rl_pool.jsonl"), &rl_pool, &mut out)?;
    Ok(out)
}

fn cmd_rollout(cfg: &EngineConfig, questions: &Path) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let questions = load_questions(cfg, questions, &mut out)?;
    let backend = build_backend(cfg, &cfg.policy)?;
    let tools = build_tools(cfg)?;
    let mut groups = Vec::new();
    for (i, q) in questions.iter().enumerate() {
        let group = run_group(q, &cfg.rollout, backend.as_ref(), &tools, crate::rollout::rollout_seed(cfg.seed, i))
            .map_err(|e| CliError::Config(e.to_string()))?;
        for f in &group.failures {
            out.failures.push(ItemError { item: format!("{}#{}", q.id, f.rollout_index), error: f.error.clone() });
        }
        groups.push(group);
    }
    write_records(&cfg.out_path("groups.jsonl"), &groups, &mut out)?;
    Ok(out)
}

fn groups_from_input(
    cfg: &EngineConfig,
    input: &Path,
    questions: Option<&Path>,
    out: &mut Outcome,
) -> Result<Vec<GroupRollout>, CliError> {
    let path = cfg.resolve(input);
    let (groups, errors) = read_records::<GroupRollout>(&path)?;
    if errors.is_empty() || !groups.is_empty() {
        out.failures.extend(errors);
        return Ok(groups);
    }
    // Not a group file: bare trajectories, grouped by question in file order.
    let (trajs, errors) = read_records::<Trajectory>(&path)?;
    out.failures.extend(errors);
    let qpath = questions.ok_or_else(|| CliError::MissingInput("--questions is required for trajectory input".into()))?;
    let golds: BTreeMap<String, Question> =
        load_questions(cfg, qpath, out)?.into_iter().map(|q| (q.id.clone(), q)).collect();
    let mut order = Vec::new();
    let mut by_q: BTreeMap<String, Vec<Trajectory>> = BTreeMap::new();
    for t in trajs {
        if !by_q.contains_key(&t.question_id) {
            order.push(t.question_id.clone());
        }
        by_q.entry(t.question_id.clone()).or_default().push(t);
    }
    let mut groups = Vec::new();
    for qid in order {
        let Some(q) = golds.get(&qid) else {
            out.failures.push(ItemError { item: qid, error: "no question record".into() });
            continue;
        };
        let trajectories = by_q.remove(&qid).unwrap_or_default();
        groups.push(GroupRollout {
            question_id: qid,
            gold: q.gold.clone(),
            group_seed: 0,
            rollout_indices: (0..trajectories.len()).collect(),
            seeds: trajectories.iter().map(|t| t.seed.unwrap_or(0)).collect(),
            usable: true,
            trajectories,
            monitor_events: Vec::new(),
            failures: Vec::new(),
            verdicts: Vec::new(),
            rewards: Vec::new(),
            advantages: Vec::new(),
        });
    }
    Ok(groups)
}

fn cmd_score(cfg: &EngineConfig, input: &Path, questions: Option<&Path>) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let mut groups = groups_from_input(cfg, input, questions, &mut out)?;
    let judge = cfg.judge.as_ref().map(|j| build_backend(cfg, j)).transpose()?;
    let mut reports = Vec::new();
    for g in &mut groups {
        match score_group(g, &cfg.reward, &cfg.format_limits(), &WhitespaceTokenizer, judge.as_deref()) {
            Ok(r) => {
                if !r.usable {
                    out.failures.push(ItemError { item: g.question_id.clone(), error: "group unusable".into() });
                }
                reports.push(r);
            }
            Err(e) => out.failures.push(ItemError { item: g.question_id.clone(), error: e.to_string() }),
        }
    }
    write_records(&cfg.out_path("reports.jsonl"), &reports, &mut out)?;
    write_records(&cfg.out_path("scored_groups.jsonl"), &groups, &mut out)?;
    Ok(out)
}

fn cmd_export_sft(cfg: &EngineConfig, questions: &Path) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let questions = load_questions(cfg, questions, &mut out)?;
    let backend = build_backend(cfg, &cfg.policy)?;
    let tools = build_tools(cfg)?;
    let mut records = Vec::new();
    for (i, q) in questions.iter().enumerate() {
        let s = rejection_sample_sft(
            q,
            cfg.curation.sft_samples,
            cfg.curation.turn_cap,
            &cfg.rollout,
            &cfg.format_limits(),
            backend.as_ref(),
            &tools,
            &WhitespaceTokenizer,
            crate::rollout::rollout_seed(cfg.seed, i),
        );
        if s.unfilled {
            out.failures.push(ItemError { item: q.id.clone(), error: "no trajectory survived rejection sampling".into() });
        }
        records.extend(s.kept);
    }
    write_records(&cfg.out_path("sft.jsonl"), &records, &mut out)?;
    Ok(out)
}

fn cmd_export_rl(cfg: &EngineConfig, groups: &Path, reports: &Path) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let (groups, e1) = read_records::<GroupRollout>(&cfg.resolve(groups))?;
    let (reports, e2) = read_records::<RewardReport>(&cfg.resolve(reports))?;
    out.failures.extend(e1.into_iter().chain(e2));
    let by_id: BTreeMap<&str, &RewardReport> = reports.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let mut records = Vec::new();
    for g in &groups {
        let Some(report) = by_id.get(g.question_id.as_str()) else {
            out.failures.push(ItemError { item: g.question_id.clone(), error: "no reward report".into() });
            continue;
        };
        match export_rl(g, report, &WhitespaceTokenizer) {
            Ok(r) => records.extend(r),
            Err(e) => out.failures.push(ItemError { item: g.question_id.clone(), error: e.to_string() }),
        }
    }
    write_records(&cfg.out_path("rl.jsonl"), &records, &mut out)?;
    Ok(out)
}

fn cmd_analyze(cfg: &EngineConfig, groups: &Path, evidence: Option<&Path>) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let (groups, errors) = read_records::<GroupRollout>(&cfg.resolve(groups))?;
    out.failures.extend(errors);
    let mut logs = Vec::new();
    let mut runs = Vec::new();
    let mut urls = Vec::new();
    for g in &groups {
        for (pos, t) in g.trajectories.iter().enumerate() {
            let index = g.rollout_indices.get(pos).copied().unwrap_or(pos);
            let events = g.monitor_events.iter().filter(|e| e.rollout_index == index).cloned().collect();
            logs.push((t.clone(), g.gold.clone()));
            runs.push((t.clone(), events, g.gold.clone()));
            urls.extend(visited_urls(t));
        }
    }
    let taxonomy = cfg.taxonomy.clone().unwrap_or_default();
    let mut report = AnalysisReport {
        outcomes: outcome_breakdown(&logs),
        visits: categorize_visits(&urls, &taxonomy),
        oem: oem_stats(&runs),
        evidence: None,
    };
    if let Some(path) = evidence {
        let (pairs, errors) = read_records::<EvidencePair>(&cfg.resolve(path))?;
        out.failures.extend(errors);
        let judge = cfg
            .judge
            .as_ref()
            .ok_or_else(|| CliError::Config("evidence judging needs a [judge] backend".into()))?;
        let judge = build_backend(cfg, judge)?;
        let verdicts: Vec<_> = pairs.iter().map(|p| judge_evidence(p, judge.as_ref())).collect();
        report.evidence = Some(tally(&verdicts));
        write_records(&cfg.out_path("evidence_verdicts.jsonl"), &verdicts, &mut out)?;
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&cfg.out_path("analysis.json"), &(json + "\n"), &mut out)?;
    write_text(&cfg.out_path("analysis.txt"), &report.to_table(), &mut out)?;
    Ok(out)
}

fn cmd_report(cfg: &EngineConfig, analysis: &Path) -> Result<Outcome, CliError> {
    let path = cfg.resolve(analysis);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    let report: AnalysisReport =
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Outcome { stdout: report.to_table(), ..Default::default() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
struct Probe {
    name: String,
    ok: bool,
    detail: String,
}

fn probe_backend(name: &str, cfg: &EngineConfig, b: &BackendConfig) -> Probe {
    let result = build_backend(cfg, b).and_then(|backend| match b {
        BackendConfig::Chat { endpoint, model, api_key_env } => ChatCompletionsBackend::new(
            endpoint,
            model,
            api_key_env.as_ref().and_then(|v| std::env::var(v).ok()),
        )
        .and_then(|c| c.probe())
        .map(|_| format!("{model} at {endpoint}"))
        .map_err(|e| CliError::Io(e.to_string())),
        BackendConfig::Scripted { .. } => Ok(format!("scripted, live: {}", backend.is_live())),
    });
    match result {
        Ok(detail) => Probe { name: name.into(), ok: true, detail },
        Err(e) => Probe { name: name.into(), ok: false, detail: e.to_string() },
    }
}

fn cmd_selfcheck(cfg: &EngineConfig) -> Outcome {
    let mut probes = vec![probe_backend("policy", cfg, &cfg.policy)];
    if let Some(j) = &cfg.judge {
        probes.push(probe_backend("judge", cfg, j));
    }
    probes.push(match build_tools(cfg) {
        Ok(tools) => {
            let r = tools.execute(r#"{"name":"search","arguments":{"query":["selfcheck"]}}"#);
            let ok = !r.contains("[search error]") && !r.contains("[tool error]");
            Probe { name: "tools".into(), ok, detail: r.lines().next().unwrap_or("").to_string() }
        }
        Err(e) => Probe { name: "tools".into(), ok: false, detail: e.to_string() },
    });
    let fixtures = [
        (r#"{"name":"search","arguments":{"query":["a"]}}"#, true),
        (r#"{"name":"search","arguments":{"query":["a","b","c","d","e","f"]}}"#, false),
        (r#"{"name":"visit","arguments":{"url":["https://a.org"]}}"#, true),
        (r#"{"name":"visit","arguments":{"url":[]}}"#, false),
    ];
    let schema_ok = fixtures.iter().all(|(body, ok)| validate_tool_call(body).is_ok() == *ok)
        && tool_schemas().as_array().is_some_and(|a| a.len() == 2);
    probes.push(Probe { name: "schemas".into(), ok: schema_ok, detail: "tool-call fixtures".into() });
    for var in cfg.missing_secrets() {
        probes.push(Probe { name: format!("secret {var}"), ok: false, detail: "environment variable not set".into() });
    }
    let failures = probes
        .iter()
        .filter(|p| !p.ok)
        .map(|p| ItemError { item: p.name.clone(), error: p.detail.clone() })
        .collect();
    let summary = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "probes": probes,
    });
    Outcome { stdout: format!("{summary}\n"), failures, ..Default::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
            policy = { kind = "scripted", script = "s.jsonl" }
            tools = { kind = "mock", web = "w.jsonl" }
            [rollout]
            max_turn = 3
        "#;
        let err = toml::from_str::<EngineConfig>(text).unwrap_err().to_string();
        assert!(err.contains("max_turn"), "{err}");
    }

    #[test]
    fn defaults_fill_in() {
        let text = r#"
            policy = { kind = "scripted", script = "s.jsonl" }
            tools = { kind = "mock", web = "w.jsonl" }
            [rollout.monitor]
            stall_threshold = 2
        "#;
        let cfg: EngineConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.rollout.max_turns, 30);
        assert_eq!(cfg.rollout.monitor.unwrap().stall_threshold, 2);
        assert_eq!(cfg.rollout.monitor.unwrap().hard_cap_turn, 20);
        assert_eq!(cfg.reward.lambda, 0.5);
        assert_eq!(cfg.curation.turn_cap, 15);
    }

    #[test]
    fn missing_secret_is_named() {
        let text = r#"
            policy = { kind = "chat", endpoint = "http://127.0.0.1:9", model = "m", api_key_env = "DR_TEST_UNSET_KEY_93" }
            tools = { kind = "mock", web = "w.jsonl" }
        "#;
        let cfg: EngineConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.missing_secrets(), ["DR_TEST_UNSET_KEY_93"]);
    }

    #[test]
    fn live_config_parses() {
        let text = r#"
            seed = 7
            policy = { kind = "chat", endpoint = "http://localhost:8000/v1", model = "agent", api_key_env = "POLICY_KEY" }
            summarizer = { kind = "chat", endpoint = "https://api.example.com/v1", model = "s", api_key_env = "JUDGE_KEY" }
            [tools]
            kind = "live"
            search_endpoint = "https://google.serper.dev/search"
            search_key_env = "SERPER_KEY"
            reader_endpoint = "https://r.jina.ai/"
            reader_key_env = "JINA_KEY"
        "#;
        let cfg: EngineConfig = toml::from_str(text).unwrap();
        assert!(matches!(cfg.tools, ToolsConfig::Live { results: 10, .. }));
        assert!(cfg.rollout.monitor.is_none());
    }
}
