use std::path::Path;
use std::sync::Arc;

use deepresearch::backend::{FnBackend, Role, ScriptedBackend};
use deepresearch::jsonl;
use deepresearch::oem::MonitorConfig;
use deepresearch::reward::{export_rl, score_group, RewardConfig};
use deepresearch::rollout::{run_group, GoldAnswer, Question, RolloutConfig};
use deepresearch::synthpipe::{
    curate_rl, run_trials, synthesize_corpus, CorpusConfig, CurationOutcome, TableSynth, TrialMode,
};
use deepresearch::toolbelt::mock::MockWeb;
use deepresearch::toolbelt::Toolbelt;
use deepresearch::trajectory::{FormatLimits, SegmentKind, Termination, WhitespaceTokenizer};

fn fixture_env() -> (Vec<Question>, ScriptedBackend, Toolbelt) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let questions = jsonl::read_file(&dir.join("questions.jsonl")).unwrap().into_result().unwrap();
    let backend = ScriptedBackend::load(&dir.join("script.jsonl")).unwrap();
    let web = MockWeb::load(&dir.join("web.jsonl")).unwrap();
    (questions, backend, Toolbelt::mock(Arc::new(web)))
}

#[test]
fn scored_group_exports_aligned_masks() {
    let (questions, backend, tools) = fixture_env();
    let cfg = RolloutConfig { monitor: Some(MonitorConfig::default()), ..Default::default() };
    let mut group = run_group(&questions[0], &cfg, &backend, &tools, 1).unwrap();
    assert_eq!(group.trajectories[4].termination, Termination::MonitorForced);
    assert_eq!(group.trajectories[5].termination, Termination::FormatFailure);

    let report =
        score_group(&mut group, &RewardConfig::default(), &FormatLimits::default(), &WhitespaceTokenizer, None).unwrap();
    assert!(report.usable);
    // Successful rollouts took 2, 1, 4, 3 and 6 tool turns.
    assert!((report.n_bar.unwrap() - 3.2).abs() < 1e-12);
    assert!((report.accuracy - 0.625).abs() < 1e-12);
    let rewards: Vec<f64> = report.rollouts.iter().map(|r| r.reward).collect();
    assert_eq!(&rewards[..2], &[1.0, 1.0]);
    assert!(rewards[2] < 1.0 && rewards[2] > rewards[6], "{rewards:?}");
    assert_eq!(rewards[3], 0.0);
    assert_eq!(rewards[5], 0.0);

    let records = export_rl(&group, &report, &WhitespaceTokenizer).unwrap();
    assert_eq!(records.len(), 8);
    for r in &records {
        assert_eq!(r.tokens.len(), r.mask.len());
        let responses: usize = r
            .trajectory
            .segments
            .iter()
            .filter(|s| matches!(s.kind, SegmentKind::Input | SegmentKind::ToolResponse))
            .map(|s| s.text.split_whitespace().count())
            .sum();
        assert_eq!(r.mask.len() - r.mask.ones(), responses);
    }
}

#[test]
fn group_output_ignores_parallelism() {
    let (questions, backend, tools) = fixture_env();
    let serial = RolloutConfig { parallelism: 1, ..Default::default() };
    let wide = RolloutConfig { parallelism: 8, ..Default::default() };
    let a = run_group(&questions[0], &serial, &backend, &tools, 5).unwrap();
    let b = run_group(&questions[0], &wide, &backend, &tools, 5).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn synthesized_questions_flow_into_curation() {
    let world = TableSynth::random(8, 150);
    let tools = Toolbelt::mock(Arc::new(world.web()));
    let seeds: Vec<String> = world.names().take(10).map(String::from).collect();
    let corpus = synthesize_corpus(&seeds, &CorpusConfig { target: 6, ..Default::default() }, &world, &tools).unwrap();
    assert_eq!(corpus.questions.len(), 6);

    let questions: Vec<Question> = corpus
        .questions
        .iter()
        .map(|qa| Question { id: qa.id.clone(), question: qa.question.clone(), gold: GoldAnswer::open(&qa.answer) })
        .collect();
    // A policy that knows the answer to the even-numbered questions only,
    // without tools, and answers everything after one search with tools.
    let answers: Vec<(String, String)> = corpus.questions.iter().map(|q| (q.question.clone(), q.answer.clone())).collect();
    let policy = FnBackend::new(move |req| {
        let prompt = &req.messages.iter().find(|m| m.role == Role::User).unwrap().content;
        let idx = answers.iter().position(|(q, _)| prompt.contains(q.as_str())).unwrap_or(0);
        let tool_free = req.messages.len() == 1;
        let reply = if tool_free {
            if idx % 2 == 0 { format!("<answer>{}</answer>", answers[idx].1) } else { "<answer>unknown</answer>".into() }
        } else if req.context.turn_index == 0 {
            r#"<think>search</think><tool_call>{"name":"search","arguments":{"query":["syndrome"]}}</tool_call>"#.into()
        } else {
            format!("<answer>{}</answer>", answers[idx].1)
        };
        Ok(reply)
    });
    let cfg = RolloutConfig::default();
    let tool_free: Vec<_> =
        questions.iter().map(|q| run_trials(q, TrialMode::ToolFree, 4, &cfg, &policy, &tools, 0)).collect();
    let single: Vec<_> =
        questions.iter().map(|q| run_trials(q, TrialMode::SingleTool, 4, &cfg, &policy, &tools, 0)).collect();
    let ids: Vec<String> = questions.iter().map(|q| q.id.clone()).collect();
    let decisions = curate_rl(&ids, &tool_free, &single);
    for (i, d) in decisions.iter().enumerate() {
        // Even questions are solved without tools; odd ones are solved
        // every time with one tool, so neither stage keeps anything.
        let want = if i % 2 == 0 { CurationOutcome::DroppedStage1 } else { CurationOutcome::DroppedStage2 };
        assert_eq!(d.outcome, want, "{d:?}");
    }
}
