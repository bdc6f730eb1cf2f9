//! Walk the rhabdomyosarcoma chain, compose an anonymized question, then
//! synthesize a small corpus from a random world.

use std::sync::Arc;

use deepresearch::synthpipe::{
    build_chain, obfuscate_and_compose, quality_filter, synthesize_corpus, CorpusConfig, SynthBounds, TableSynth,
};
use deepresearch::toolbelt::Toolbelt;

fn main() -> anyhow::Result<()> {
    let world = TableSynth::rhabdomyosarcoma();
    let tools = Toolbelt::mock(Arc::new(world.web()));
    let bounds = SynthBounds::default();
    let chain = build_chain("Childhood Rhabdomyosarcoma", 3, &bounds, &world, &tools)?;
    for (node, link) in chain.nodes.iter().zip(chain.links.iter().map(Some).chain([None])) {
        print!("{}", node.name);
        if let Some(l) = link {
            print!("  --{}-->  ", l.relation);
        }
    }
    let qa = obfuscate_and_compose("rms-1", &chain, &bounds, &world)?;
    println!("\n\nQ: {}\nA: {}\nquality: {:?}\n", qa.question, qa.answer, quality_filter(&qa, &world));

    let random = TableSynth::random(3, 150);
    let tools = Toolbelt::mock(Arc::new(random.web()));
    let seeds: Vec<String> = random.names().take(20).map(String::from).collect();
    let corpus = synthesize_corpus(&seeds, &CorpusConfig { target: 8, ..Default::default() }, &random, &tools)
        .map_err(anyhow::Error::msg)?;
    for q in &corpus.questions {
        println!("{} ({} hops, {} attempts): {}", q.id, q.hops, q.attempts, q.answer);
    }
    for r in &corpus.rejections {
        println!("rejected job {}: {}", r.job, r.reason);
    }
    Ok(())
}
