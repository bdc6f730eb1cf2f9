//! pass@k SFT filtering, two-stage RL curation and rejection sampling.

use std::path::Path;
use std::sync::Arc;

use deepresearch::backend::ScriptedBackend;
use deepresearch::jsonl;
use deepresearch::rollout::{Question, RolloutConfig};
use deepresearch::synthpipe::{curate_rl, pass_at_k_sft_filter, rejection_sample_sft, TrialMode, TrialRecord};
use deepresearch::toolbelt::mock::MockWeb;
use deepresearch::toolbelt::Toolbelt;
use deepresearch::trajectory::{FormatLimits, WhitespaceTokenizer};

fn record(id: &str, mode: TrialMode, outcomes: [bool; 4]) -> TrialRecord {
    TrialRecord { question_id: id.into(), mode, outcomes: outcomes.to_vec() }
}

fn main() -> anyhow::Result<()> {
    let pass = [
        record("q1", TrialMode::SingleTool, [false; 4]),
        record("q2", TrialMode::SingleTool, [true, false, false, false]),
        record("q3", TrialMode::SingleTool, [true, true, false, false]),
    ];
    for r in &pass {
        println!("{}: {} of 4 solved, keep for SFT: {}", r.question_id, r.successes(), pass_at_k_sft_filter(r));
    }

    let ids: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let stage1 = [
        record("a", TrialMode::ToolFree, [true, true, true, false]),
        record("b", TrialMode::ToolFree, [false; 4]),
        record("c", TrialMode::ToolFree, [true, false, false, false]),
    ];
    let stage2 = [
        record("b", TrialMode::SingleTool, [true, false, false, false]),
        record("c", TrialMode::SingleTool, [true, true, true, true]),
    ];
    for d in curate_rl(&ids, &stage1, &stage2) {
        println!("{}: {:?}", d.question_id, d.outcome);
    }

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let questions: Vec<Question> = jsonl::read_file(&dir.join("questions.jsonl"))?.into_result()?;
    let backend = ScriptedBackend::load(&dir.join("script.jsonl"))?;
    let tools = Toolbelt::mock(Arc::new(MockWeb::load(&dir.join("web.jsonl"))?));
    let cfg = RolloutConfig { monitor: None, ..Default::default() };
    let s = rejection_sample_sft(&questions[0], 8, 15, &cfg, &FormatLimits::default(), &backend, &tools, &WhitespaceTokenizer, 7);
    let kept: Vec<usize> = s.kept.iter().map(|r| r.rollout_index).collect();
    println!("rejection sampling kept rollouts {kept:?} of {}", s.sampled);
    Ok(())
}
