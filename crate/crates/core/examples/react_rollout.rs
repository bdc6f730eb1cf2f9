//! Run a scripted rollout group and print each trajectory's outcome.

use std::path::Path;
use std::sync::Arc;

use deepresearch::backend::ScriptedBackend;
use deepresearch::rollout::{run_group, Question, RolloutConfig};
use deepresearch::toolbelt::mock::MockWeb;
use deepresearch::toolbelt::Toolbelt;
use deepresearch::{jsonl, trajectory::render};

fn main() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let questions: Vec<Question> = jsonl::read_file(&dir.join("questions.jsonl"))?.into_result()?;
    let backend = ScriptedBackend::load(&dir.join("script.jsonl"))?;
    let tools = Toolbelt::mock(Arc::new(MockWeb::load(&dir.join("web.jsonl"))?));
    let cfg = RolloutConfig { monitor: None, ..Default::default() };

    let group = run_group(&questions[0], &cfg, &backend, &tools, 7)?;
    for (i, t) in group.trajectories.iter().enumerate() {
        println!("rollout {i}: {:?} after {} tool turns, answer {:?}", t.termination, t.turn_count, t.answer());
    }
    println!("\nrollout 0 transcript:\n{}", render(&group.trajectories[0]));
    Ok(())
}
