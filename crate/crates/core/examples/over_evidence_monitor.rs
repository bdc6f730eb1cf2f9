//! Step the over-evidence monitor through a verification loop, then show
//! it cutting a live rollout short.

use std::path::Path;
use std::sync::Arc;

use deepresearch::backend::ScriptedBackend;
use deepresearch::jsonl;
use deepresearch::oem::{observe, should_terminate, MonitorConfig, MonitorState, RuleExtractor};
use deepresearch::rollout::{run_rollout, Question, RolloutConfig};
use deepresearch::toolbelt::mock::MockWeb;
use deepresearch::toolbelt::Toolbelt;

fn main() -> anyhow::Result<()> {
    let turns = [
        "<think>Let me look for the subtype first.</think>",
        "<think>The answer is B, but I should double-check.</think>",
        "<think>Another source. The answer is B.</think>",
        "<think>Option B is correct, still verifying.</think>",
        "<think>One more search. The answer is B.</think>",
    ];
    let cfg = MonitorConfig::default();
    let mut state = MonitorState::default();
    for (i, text) in turns.iter().enumerate() {
        let (next, action) = observe(&state, text, &RuleExtractor);
        state = next;
        let d = should_terminate(&state, &cfg);
        println!("turn {}: {action:?}, streak {}, stop {}", i + 1, state.unchanged_streak, d.stop);
        if d.stop {
            println!("forced answer: {:?}", d.answer);
            break;
        }
    }

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let questions: Vec<Question> = jsonl::read_file(&dir.join("questions.jsonl"))?.into_result()?;
    let backend = ScriptedBackend::load(&dir.join("script.jsonl"))?;
    let tools = Toolbelt::mock(Arc::new(MockWeb::load(&dir.join("web.jsonl"))?));
    for monitor in [None, Some(cfg)] {
        let rc = RolloutConfig { monitor, ..Default::default() };
        let run = run_rollout(&questions[0], &rc, &backend, &tools, 4, 0)?;
        println!(
            "monitor {}: {:?} after {} tool turns",
            if monitor.is_some() { "on " } else { "off" },
            run.trajectory.termination,
            run.trajectory.turn_count
        );
    }
    Ok(())
}
