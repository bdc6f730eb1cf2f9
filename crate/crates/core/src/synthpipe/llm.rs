//! Synthesis steps answered by a chat model through prompt templates.

use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::{
    Candidate, Composition, EntityFacts, EntityNode, MedSearchQA, MedicalChain, QualityJudgement,
    SourceDoc, SynthBackend, SynthError,
};
use crate::backend::{generate_with_retry, GenerateRequest, Message, ModelBackend};
use crate::toolbelt::parse_json_object;

/// Characters of each source passed to the entity summarizer.
const SOURCE_EXCERPT_CHARS: usize = 6_000;

pub const DESCRIBE_PROMPT: &str = "You are building a medical knowledge chain. Consolidate what the sources below say about the entity \"{entity}\".

{sources}

Return a JSON object with two fields:
- \"summary\": the key verifiable facts about the entity, keeping every number (prevalence, counts, dosages, lengths) exactly as stated.
- \"aliases\": other names, abbreviations or symbols the sources use for the same entity.";

pub const NEXT_HOP_PROMPT: &str = "You are extending a multi-hop medical reasoning chain by one hop. The chain so far:

{chain}

Current entity: \"{entity}\"
Facts: {summary}

Propose up to five entities that follow from the current entity through a verifiable medical relation (cause, mechanism, subtype, treatment, marker, anatomy). Do not propose any entity already in the chain. Return a JSON object {\"candidates\": [{\"name\": ..., \"relation\": ..., \"rationale\": ..., \"score\": number between 0 and 1}]}, where the rationale cites the supporting source url and the score is how relevant and well supported the hop is.";

pub const COMPOSE_PROMPT: &str = "Write one hard multi-hop question from the medical chain below. The answer is the last entity.

{chain}

Rules:
1. Describe every entity only through its functional attributes. Never mention any entity name, alias, abbreviation or gene symbol from the chain.
2. Keep numeric attributes such as prevalence, counts, dosages and lengths; they make the question verifiable.
3. The question must lead through every hop in order and have exactly one correct answer.
{retry_note}
Return a JSON object {\"descriptions\": [one anonymized description per entity, in chain order], \"question\": ...}.";

pub const QUALITY_PROMPT: &str = "You are reviewing a synthesized multi-hop medical question.

Chain:
{chain}

Question: {question}
Answer: {answer}

Check each link of the chain for medical soundness and check that the question determines the answer uniquely. Return a JSON object {\"links_sound\": [true or false per link, in order], \"unique_answer\": true or false, \"reason\": ...}.";

/// [`SynthBackend`] over a chat model.
#[derive(Clone)]
pub struct LlmSynth {
    backend: Arc<dyn ModelBackend>,
    attempts: u32,
}

impl LlmSynth {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        Self { backend, attempts: 2 }
    }

    fn ask<T: DeserializeOwned>(&self, prompt: String) -> Result<T, SynthError> {
        let messages = [Message::user(prompt)];
        let reply = generate_with_retry(self.backend.as_ref(), &GenerateRequest::new(&messages), self.attempts)
            .map_err(|e| SynthError::Backend(e.to_string()))?;
        parse_json_object(&reply).ok_or_else(|| SynthError::Unparseable(reply.chars().take(200).collect()))
    }
}

fn render_chain(nodes: &[EntityNode], links: &[super::ChainLink]) -> String {
    let mut out = String::new();
    for (i, n) in nodes.iter().enumerate() {
        out.push_str(&format!("{}. {}: {}\n", i + 1, n.name, n.summary));
        if let Some(l) = links.get(i) {
            out.push_str(&format!("   -> {} ({})\n", l.relation, l.rationale));
        }
    }
    out
}

impl SynthBackend for LlmSynth {
    fn describe_entity(&self, name: &str, sources: &[SourceDoc]) -> Result<EntityFacts, SynthError> {
        let rendered = sources
            .iter()
            .map(|s| format!("Source {}:\n{}", s.url, s.content.chars().take(SOURCE_EXCERPT_CHARS).collect::<String>()))
            .collect::<Vec<_>>()
            .join("\n\n");
        self.ask(DESCRIBE_PROMPT.replace("{entity}", name).replace("{sources}", &rendered))
    }

    fn next_hops(&self, chain: &[EntityNode]) -> Result<Vec<Candidate>, SynthError> {
        #[derive(Deserialize)]
        struct Reply {
            candidates: Vec<Candidate>,
        }
        let last = chain.last().ok_or_else(|| SynthError::Backend("empty chain".into()))?;
        let names: Vec<&str> = chain.iter().map(|n| n.name.as_str()).collect();
        let reply: Reply = self.ask(
            NEXT_HOP_PROMPT
                .replace("{chain}", &names.join(" -> "))
                .replace("{entity}", &last.name)
                .replace("{summary}", &last.summary),
        )?;
        Ok(reply.candidates)
    }

    fn compose(&self, chain: &MedicalChain, attempt: u32) -> Result<Composition, SynthError> {
        let note = if attempt > 0 {
            "4. A previous draft named a chain entity and was rejected; check every word against the chain.\n"
        } else {
            ""
        };
        self.ask(
            COMPOSE_PROMPT
                .replace("{chain}", &render_chain(&chain.nodes, &chain.links))
                .replace("{retry_note}", note),
        )
    }

    fn judge_quality(&self, qa: &MedSearchQA) -> Result<QualityJudgement, SynthError> {
        self.ask(
            QUALITY_PROMPT
                .replace("{chain}", &render_chain(&qa.chain.nodes, &qa.chain.links))
                .replace("{question}", &qa.question)
                .replace("{answer}", &qa.answer),
        )
    }
}
