//! Outcome breakdown, domain shares, monitor statistics and the evidence
//! judge over a scripted group.

use std::path::Path;
use std::sync::Arc;

use deepresearch::analysis::{
    categorize_visits, judge_evidence, oem_stats, outcome_breakdown, tally, visited_urls, AnalysisReport,
    DomainTaxonomy, EvidencePair,
};
use deepresearch::backend::{FnBackend, ScriptedBackend};
use deepresearch::jsonl;
use deepresearch::oem::MonitorConfig;
use deepresearch::rollout::{run_group, Question, RolloutConfig};
use deepresearch::toolbelt::mock::MockWeb;
use deepresearch::toolbelt::Toolbelt;

fn main() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let questions: Vec<Question> = jsonl::read_file(&dir.join("questions.jsonl"))?.into_result()?;
    let backend = ScriptedBackend::load(&dir.join("script.jsonl"))?;
    let tools = Toolbelt::mock(Arc::new(MockWeb::load(&dir.join("web.jsonl"))?));
    let cfg = RolloutConfig { monitor: Some(MonitorConfig::default()), ..Default::default() };
    let group = run_group(&questions[0], &cfg, &backend, &tools, 7)?;

    let logs: Vec<_> = group.trajectories.iter().map(|t| (t.clone(), group.gold.clone())).collect();
    let runs: Vec<_> = group
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let events = group.monitor_events.iter().filter(|e| e.rollout_index == i).cloned().collect();
            (t.clone(), events, group.gold.clone())
        })
        .collect();
    let urls: Vec<String> = group.trajectories.iter().flat_map(visited_urls).collect();

    // A judge that prefers the longer evidence, standing in for a chat model.
    let judge = FnBackend::new(|req| {
        let p = req.last_user();
        let a = p.split("**Model A").nth(1).and_then(|s| s.split("**Model B").next()).map_or(0, str::len);
        let b = p.split("**Model B").nth(1).and_then(|s| s.split("**Evaluation").next()).map_or(0, str::len);
        let w = if a > b { "A" } else { "B" };
        Ok(format!("{{\"winner\": \"{w}\", \"reason\": \"more supporting facts\"}}"))
    });
    let pairs: Vec<EvidencePair> = jsonl::read_file(&dir.join("evidence.jsonl"))?.into_result()?;
    let verdicts: Vec<_> = pairs.iter().map(|p| judge_evidence(p, &judge)).collect();

    let report = AnalysisReport {
        outcomes: outcome_breakdown(&logs),
        visits: categorize_visits(&urls, &DomainTaxonomy::default()),
        oem: oem_stats(&runs),
        evidence: Some(tally(&verdicts)),
    };
    print!("{}", report.to_table());
    Ok(())
}
