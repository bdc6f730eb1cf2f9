use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::backend::{FnBackend, ScriptedBackend};
use crate::rollout::GoldAnswer;
use crate::trajectory::{SegmentKind, WhitespaceTokenizer};

const RMS_PATH: [&str; 5] = [
    "Childhood Rhabdomyosarcoma",
    "Embryonal vs. Alveolar (Aggressive)",
    "Alveolar Rhabdomyosarcoma",
    "PAX3::FOXO1 Fusion",
    "t(2;13)(q35;q14) translocation",
];

fn rms() -> (TableSynth, Toolbelt) {
    let world = TableSynth::rhabdomyosarcoma();
    let tools = Toolbelt::mock(Arc::new(world.web()));
    (world, tools)
}

fn names(chain: &MedicalChain) -> Vec<&str> {
    chain.nodes.iter().map(|n| n.name.as_str()).collect()
}

#[test]
fn rhabdomyosarcoma_walk() {
    let (world, tools) = rms();
    let chain = build_chain(RMS_PATH[0], 4, &SynthBounds::default(), &world, &tools).unwrap();
    assert_eq!(names(&chain), RMS_PATH);
    assert!(!chain.short);
    assert!(chain.violations(&SynthBounds::default()).is_empty(), "{:?}", chain.violations(&SynthBounds::default()));
}

#[test]
fn rhabdomyosarcoma_question() {
    let (world, tools) = rms();
    let chain = build_chain(RMS_PATH[0], 4, &SynthBounds::default(), &world, &tools).unwrap();
    let qa = obfuscate_and_compose("rms", &chain, &SynthBounds::default(), &world).unwrap();
    assert!(qa.question.contains("roughly 50% of soft tissue sarcomas in children"));
    assert!(qa.question.contains("438 amino acids"));
    assert_eq!(qa.answer, "t(2;13)(q35;q14) translocation");
    assert_eq!(qa.attempts, 1);
    assert!(leaked_terms(&qa.question, &chain).is_empty());
    assert!(quality_filter(&qa, &world).keep);
}

#[test]
fn aliases_count_as_leaks() {
    let (world, tools) = rms();
    let chain = build_chain(RMS_PATH[0], 4, &SynthBounds::default(), &world, &tools).unwrap();
    // "RMS" is a substring of "ARMS", so both aliases match.
    assert_eq!(leaked_terms("Which ARMS driver is it?", &chain), vec!["RMS", "ARMS"]);
    assert_eq!(leaked_terms("the pax3 gene", &chain), vec!["PAX3"]);
}

struct Leaky {
    inner: TableSynth,
    composes: AtomicU32,
}

impl SynthBackend for Leaky {
    fn describe_entity(&self, name: &str, s: &[SourceDoc]) -> Result<EntityFacts, SynthError> {
        self.inner.describe_entity(name, s)
    }
    fn next_hops(&self, chain: &[EntityNode]) -> Result<Vec<Candidate>, SynthError> {
        self.inner.next_hops(chain)
    }
    fn compose(&self, chain: &MedicalChain, attempt: u32) -> Result<Composition, SynthError> {
        self.composes.fetch_add(1, Ordering::SeqCst);
        let mut c = self.inner.compose(chain, attempt)?;
        c.question.push_str(" The fusion involves PAX3.");
        Ok(c)
    }
    fn judge_quality(&self, qa: &MedSearchQA) -> Result<QualityJudgement, SynthError> {
        self.inner.judge_quality(qa)
    }
}

#[test]
fn persistent_leak_is_rejected_after_three_attempts() {
    let (world, tools) = rms();
    let leaky = Leaky { inner: world, composes: AtomicU32::new(0) };
    let chain = build_chain(RMS_PATH[0], 4, &SynthBounds::default(), &leaky, &tools).unwrap();
    let err = obfuscate_and_compose("rms", &chain, &SynthBounds::default(), &leaky).unwrap_err();
    assert_eq!(err, ComposeError::RejectedSample { attempts: 3, leaked: vec!["PAX3".into()] });
    assert_eq!(leaky.composes.load(Ordering::SeqCst), 3);
}

#[test]
fn leak_on_first_attempt_is_regenerated() {
    let (mut world, tools) = rms();
    world.entity_mut("Alveolar Rhabdomyosarcoma").unwrap().leaky_description =
        Some("Alveolar rhabdomyosarcoma is the aggressive subtype.".into());
    let chain = build_chain(RMS_PATH[0], 4, &SynthBounds::default(), &world, &tools).unwrap();
    let qa = obfuscate_and_compose("rms", &chain, &SynthBounds::default(), &world).unwrap();
    assert_eq!(qa.attempts, 2);
}

fn entity(name: &str, neighbors: &[(&str, f64)]) -> WorldEntity {
    WorldEntity {
        name: name.into(),
        url: format!("https://example.org/{}", name.to_lowercase()),
        summary: format!("{name} facts."),
        aliases: vec![],
        description: format!("the entity numbered {}.", name.len()),
        leaky_description: None,
        neighbors: neighbors
            .iter()
            .map(|(n, s)| Candidate { name: n.to_string(), relation: "relates to".into(), rationale: "r".into(), score: *s })
            .collect(),
        unsound: false,
        ambiguous: false,
    }
}

#[test]
fn cycles_never_revisit_and_ties_break_by_name() {
    let world = TableSynth::new(vec![
        entity("Alpha", &[("Beta", 0.9)]),
        entity("Beta", &[("Alpha", 1.0), ("Delta", 0.5), ("Gamma", 0.5)]),
        entity("Delta", &[("Beta", 1.0), ("Alpha", 0.9), ("Gamma", 0.1)]),
        entity("Gamma", &[]),
    ]);
    let tools = Toolbelt::mock(Arc::new(world.web()));
    let chain = build_chain("Alpha", 3, &SynthBounds::default(), &world, &tools).unwrap();
    assert_eq!(names(&chain), ["Alpha", "Beta", "Delta", "Gamma"]);
    assert!(chain.violations(&SynthBounds::default()).is_empty());
}

#[test]
fn dead_end_gives_short_chain() {
    let world = TableSynth::new(vec![entity("Alpha", &[("Beta", 0.9)]), entity("Beta", &[("Alpha", 0.9)])]);
    let tools = Toolbelt::mock(Arc::new(world.web()));
    let chain = build_chain("Alpha", 3, &SynthBounds::default(), &world, &tools).unwrap();
    assert!(chain.short);
    assert_eq!(chain.hops, 1);
    assert_eq!(obfuscate_and_compose("x", &chain, &SynthBounds::default(), &world), Err(ComposeError::ShortChain));
}

#[test]
fn unreachable_seed_is_an_error() {
    let world = TableSynth::new(vec![entity("Alpha", &[("Beta", 0.9)]), entity("Beta", &[])]);
    let web = world.web().mark_unreachable("https://example.org/alpha");
    let tools = Toolbelt::mock(Arc::new(web));
    // The search for Alpha only finds Alpha's own page.
    assert_eq!(
        build_chain("Alpha", 3, &SynthBounds::default(), &world, &tools),
        Err(ChainError::Unreachable("Alpha".into()))
    );
    assert!(matches!(
        build_chain("Alpha", 9, &SynthBounds::default(), &world, &tools),
        Err(ChainError::HopTarget { target: 9, .. })
    ));
}

#[test]
fn quality_verdicts() {
    let (mut world, tools) = rms();
    let chain = build_chain(RMS_PATH[0], 4, &SynthBounds::default(), &world, &tools).unwrap();
    let qa = obfuscate_and_compose("rms", &chain, &SynthBounds::default(), &world).unwrap();

    world.entity_mut("Alveolar Rhabdomyosarcoma").unwrap().unsound = true;
    let v = quality_filter(&qa, &world);
    assert!(!v.keep);
    assert!(v.reason.starts_with("link 2"), "{}", v.reason);

    world.entity_mut("Alveolar Rhabdomyosarcoma").unwrap().unsound = false;
    world.entity_mut(RMS_PATH[4]).unwrap().ambiguous = true;
    assert!(!quality_filter(&qa, &world).keep);

    let calls = Arc::new(AtomicU32::new(0));
    let c = calls.clone();
    let garbled = LlmSynth::new(Arc::new(FnBackend::new(move |_| {
        c.fetch_add(1, Ordering::SeqCst);
        Ok("looks fine to me".into())
    })));
    let v = quality_filter(&qa, &garbled);
    assert!(!v.keep);
    assert_eq!(calls.load(Ordering::SeqCst), 2);
}

fn record(outcomes: &[bool], mode: TrialMode) -> TrialRecord {
    TrialRecord { question_id: "q".into(), mode, outcomes: outcomes.to_vec() }
}

#[test]
fn pass_at_four() {
    let (t, f) = (true, false);
    assert!(!pass_at_k_sft_filter(&record(&[t, t, f, f], TrialMode::SingleTool)));
    assert!(pass_at_k_sft_filter(&record(&[f, f, f, f], TrialMode::SingleTool)));
    assert!(pass_at_k_sft_filter(&record(&[t, f, f, f], TrialMode::SingleTool)));
}

#[test]
fn two_stage_curation() {
    let rec = |id: &str, s: usize, mode| TrialRecord {
        question_id: id.into(),
        mode,
        outcomes: (0..4).map(|i| i < s).collect(),
    };
    let pool: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
    let stage1 = vec![
        rec("a", 3, TrialMode::ToolFree),
        rec("b", 2, TrialMode::ToolFree),
        rec("c", 2, TrialMode::ToolFree),
    ];
    let stage2 = vec![rec("b", 1, TrialMode::SingleTool), rec("c", 2, TrialMode::SingleTool)];
    let outcomes: Vec<_> = curate_rl(&pool, &stage1, &stage2).into_iter().map(|d| d.outcome).collect();
    assert_eq!(
        outcomes,
        [
            CurationOutcome::DroppedStage1,
            CurationOutcome::Kept,
            CurationOutcome::DroppedStage2,
            CurationOutcome::MissingTrials
        ]
    );
}

fn search_turn(i: u32) -> String {
    format!("<think>step {i}</think>\n<tool_call>{{\"name\":\"search\",\"arguments\":{{\"query\":[\"rhabdomyosarcoma fusion {i}\"]}}}}</tool_call>")
}

#[test]
fn rejection_sampling_keeps_short_correct_runs() {
    let (world, tools) = rms();
    let _ = world;
    let q = Question { id: "rms".into(), question: "Which translocation?".into(), gold: GoldAnswer::open(RMS_PATH[4]) };
    let answer = |a: &str| format!("<think>done</think>\n<answer>{a}</answer>");
    let mut backend = ScriptedBackend::new();
    for i in 0..3 {
        backend = backend.reply_for("rms", 0, i, search_turn(i));
    }
    backend = backend.reply_for("rms", 0, 3, answer(RMS_PATH[4]));
    for i in 0..25 {
        backend = backend.reply_for("rms", 1, i, search_turn(i));
    }
    backend = backend.reply_for("rms", 1, 25, answer(RMS_PATH[4]));
    backend = backend.reply_for("rms", 2, 0, answer("t(11;22)(q24;q12) translocation"));

    let cfg = RolloutConfig { context_budget: 1_000_000, ..Default::default() };
    let limits = FormatLimits { context_budget: 1_000_000, ..Default::default() };
    let out = rejection_sample_sft(&q, 3, 15, &cfg, &limits, &backend, &tools, &WhitespaceTokenizer, 5);
    assert_eq!(out.kept.len(), 1);
    assert_eq!(out.kept[0].rollout_index, 0);
    assert_eq!(out.kept[0].trajectory.turn_count, 3);
    assert!(!out.unfilled);

    // Zeros are exactly the input and tool-response tokens.
    let rec = &out.kept[0];
    let spans = TokenSpanMap::build(&rec.trajectory, &WhitespaceTokenizer);
    for span in &spans.spans {
        let kind = rec.trajectory.segments[span.segment_index].kind;
        let expect = u8::from(!matches!(kind, SegmentKind::Input | SegmentKind::ToolResponse));
        assert!(rec.mask.as_slice()[span.start..span.end].iter().all(|&m| m == expect));
    }

    let wrong = ScriptedBackend::new().reply("rms", 0, answer("no idea"));
    let out = rejection_sample_sft(&q, 2, 15, &cfg, &limits, &wrong, &tools, &WhitespaceTokenizer, 5);
    assert!(out.unfilled && out.kept.is_empty());
}

#[test]
fn trials_by_mode() {
    let (_, tools) = rms();
    let q = Question { id: "q".into(), question: "Which?".into(), gold: GoldAnswer::choice("B") };
    let backend = ScriptedBackend::new()
        .reply_for("q", 0, 0, "<answer>B</answer>")
        .reply_for("q", 1, 0, "B")
        .reply_for("q", 2, 0, "<answer>C</answer>");
    let r = run_trials(&q, TrialMode::ToolFree, 4, &RolloutConfig::default(), &backend, &tools, 1);
    assert_eq!(r.outcomes, [true, true, false, false]);

    let visit = r#"<think>read</think><tool_call>{"name":"visit","arguments":{"url":["https://www.nejm.org/mock/alveolar-rhabdomyosarcoma"]}}</tool_call>"#;
    let seen = Arc::new(std::sync::Mutex::new(String::new()));
    let s = seen.clone();
    let backend = FnBackend::new(move |req| {
        if req.context.turn_index == 0 {
            Ok(visit.to_string())
        } else {
            *s.lock().unwrap() = req.last_user().to_string();
            Ok("<answer>B</answer>".into())
        }
    });
    let r = run_trials(&q, TrialMode::SingleTool, 1, &RolloutConfig::default(), &backend, &tools, 1);
    assert_eq!(r.outcomes, [true]);
    assert!(seen.lock().unwrap().contains("not available"));
}

fn random_setup(seed: u64) -> (TableSynth, Toolbelt, Vec<String>) {
    let world = TableSynth::random(seed, 120);
    let tools = Toolbelt::mock(Arc::new(world.web()));
    let seeds = world.names().take(20).map(String::from).collect();
    (world, tools, seeds)
}

#[test]
fn corpus_is_deterministic_and_leak_free() {
    let (world, tools, seeds) = random_setup(3);
    let cfg = CorpusConfig { target: 12, rng_seed: 11, ..Default::default() };
    let a = synthesize_corpus(&seeds, &cfg, &world, &tools).unwrap();
    let (world2, tools2, _) = random_setup(3);
    let b = synthesize_corpus(&seeds, &cfg, &world2, &tools2).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.questions.len(), 12);
    for qa in &a.questions {
        assert!(leaked_terms(&qa.question, &qa.chain).is_empty());
        assert!(qa.chain.violations(&cfg.bounds).is_empty());
        assert_eq!(qa.answer, qa.chain.terminal().name);
    }
    assert!(a.questions.iter().any(|q| q.attempts > 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn random_walks_respect_bounds(seed in 0u64..1_000, start in 0usize..20, hop in 3u32..=8) {
        let (world, tools, seeds) = random_setup(seed % 4);
        let bounds = SynthBounds::default();
        let chain = build_chain(&seeds[start], hop, &bounds, &world, &tools).unwrap();
        prop_assert!(chain.hops <= hop);
        prop_assert_eq!(chain.short, chain.hops < hop);
        prop_assert!(chain.violations(&bounds).is_empty(), "{:?}", chain.violations(&bounds));
    }
}
