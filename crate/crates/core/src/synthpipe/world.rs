//! Table-driven synthesis backend for offline runs and tests.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Candidate, Composition, EntityFacts, EntityNode, MedSearchQA, MedicalChain, QualityJudgement,
    SourceDoc, SynthBackend, SynthError,
};
use crate::toolbelt::mock::{MockPage, MockWeb};

/// One entity of a mock world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldEntity {
    pub name: String,
    pub url: String,
    pub summary: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    /// Anonymized description used when composing questions.
    pub description: String,
    /// Description returned on the first composition attempt instead, to
    /// exercise regeneration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaky_description: Option<String>,
    #[serde(default)]
    pub neighbors: Vec<Candidate>,
    /// The judge rejects links into this entity.
    #[serde(default)]
    pub unsound: bool,
    /// The judge finds questions ending here ambiguous.
    #[serde(default)]
    pub ambiguous: bool,
}

/// Answers every synthesis step from a fixed entity table.
#[derive(Debug, Clone, Default)]
pub struct TableSynth {
    entities: BTreeMap<String, WorldEntity>,
}

impl TableSynth {
    pub fn new(entities: Vec<WorldEntity>) -> Self {
        Self { entities: entities.into_iter().map(|e| (e.name.clone(), e)).collect() }
    }

    pub fn entity(&self, name: &str) -> Option<&WorldEntity> {
        self.entities.get(name)
    }

    pub fn entity_mut(&mut self, name: &str) -> Option<&mut WorldEntity> {
        self.entities.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(String::as_str)
    }

    /// One page per entity, titled with its name.
    pub fn web(&self) -> MockWeb {
        MockWeb::new(
            self.entities
                .values()
                .map(|e| MockPage { url: e.url.clone(), title: e.name.clone(), content: e.summary.clone() })
                .collect(),
        )
    }

    fn lookup(&self, name: &str) -> Result<&WorldEntity, SynthError> {
        self.entities.get(name).ok_or_else(|| SynthError::Backend(format!("unknown entity {name:?}")))
    }

    /// The childhood rhabdomyosarcoma walk from the worked example.
    pub fn rhabdomyosarcoma() -> Self {
        let e = |name: &str, url: &str, summary: &str, aliases: &[&str], description: &str, neighbors: &[(&str, &str, f64)]| WorldEntity {
            name: name.into(),
            url: url.into(),
            summary: summary.into(),
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
            description: description.into(),
            leaky_description: None,
            neighbors: neighbors
                .iter()
                .map(|(n, rel, score)| Candidate {
                    name: n.to_string(),
                    relation: rel.to_string(),
                    rationale: format!("{name} {rel} {n}."),
                    score: *score,
                })
                .collect(),
            unsound: false,
            ambiguous: false,
        };
        Self::new(vec![
            e(
                "Childhood Rhabdomyosarcoma",
                "https://www.cancer.gov/mock/childhood-rhabdomyosarcoma",
                "Childhood rhabdomyosarcoma is the most common soft tissue sarcoma in children, roughly 50% of pediatric soft tissue sarcomas, with about 400 to 500 new diagnoses each year in the United States. Histology separates embryonal and alveolar forms.",
                &["Pediatric rhabdomyosarcoma", "RMS"],
                "A pediatric malignancy accounting for roughly 50% of soft tissue sarcomas in children and approximately 400 to 500 annual diagnoses in the United States comprises distinct histological categories.",
                &[("Embryonal vs. Alveolar (Aggressive)", "is divided into histological subtypes", 0.9), ("Soft Tissue Sarcoma", "is a type of", 0.6)],
            ),
            e(
                "Embryonal vs. Alveolar (Aggressive)",
                "https://pubmed.ncbi.nlm.nih.gov/mock/embryonal-vs-alveolar",
                "Embryonal tumors make up 60 to 70% of cases, peak at ages 0 to 5, are usually fusion-negative and often carry RAS pathway mutations. The aggressive alveolar subtype makes up 20 to 30% of diagnoses, peaks between 10 and 25 years and carries chimeric transcription factors.",
                &["Embryonal subtype"],
                "The most prevalent form, representing 60 to 70% of cases with a peak incidence in children aged 0 to 5 years, is typically \"fusion-negative\" and often driven by RAS pathway mutations. Conversely, a more aggressive subtype, constituting 20 to 30% of diagnoses with a peak onset between 10 and 25 years, is characterized by the presence of chimeric transcription factors.",
                &[("Alveolar Rhabdomyosarcoma", "has the aggressive subtype", 0.9), ("Embryonal Rhabdomyosarcoma", "has the common subtype", 0.8)],
            ),
            e(
                "Alveolar Rhabdomyosarcoma",
                "https://www.nejm.org/mock/alveolar-rhabdomyosarcoma",
                "Alveolar rhabdomyosarcoma is driven in about 60% of cases by the PAX3::FOXO1 fusion oncoprotein and in about 20% by the PAX7::FOXO1 variant.",
                &["ARMS"],
                "In approximately 60% of this aggressive subtype, the pathology is driven by a specific fusion oncoprotein.",
                &[("PAX3::FOXO1 Fusion", "is driven by the fusion oncoprotein", 0.9), ("PAX7::FOXO1 Fusion", "is less often driven by", 0.7)],
            ),
            e(
                "PAX3::FOXO1 Fusion",
                "https://pmc.ncbi.nlm.nih.gov/mock/pax3-foxo1",
                "The PAX3::FOXO1 fusion protein is 438 amino acids long and is a 10- to 100-fold stronger transcriptional activator than wild-type PAX3. It arises from the t(2;13)(q35;q14) translocation.",
                &["PAX3-FOXO1", "PAX3"],
                "This oncoprotein is 438 amino acids in length and exhibits 10- to 100-fold greater transcriptional activity than its wild-type predecessors. It is distinct from a less common variant found in roughly 20% of cases.",
                &[("t(2;13)(q35;q14) translocation", "is generated by", 0.9)],
            ),
            e(
                "t(2;13)(q35;q14) translocation",
                "https://www.ncbi.nlm.nih.gov/mock/t2-13-translocation",
                "The reciprocal translocation t(2;13)(q35;q14) joins PAX3 on chromosome 2 to FOXO1 on chromosome 13.",
                &["t(2;13)"],
                "Identify the specific reciprocal genetic rearrangement, naming the chromosomes and bands involved, that generates this primary 438-amino acid oncogenic driver.",
                &[],
            ),
            e(
                "Soft Tissue Sarcoma",
                "https://en.wikipedia.org/wiki/Mock_soft_tissue_sarcoma",
                "Soft tissue sarcomas are malignant tumors of connective tissue.",
                &[],
                "A family of malignant connective tissue tumors.",
                &[],
            ),
            e(
                "Embryonal Rhabdomyosarcoma",
                "https://www.mayoclinic.org/mock/embryonal-rhabdomyosarcoma",
                "Embryonal rhabdomyosarcoma is the most common rhabdomyosarcoma subtype.",
                &["ERMS"],
                "The most common histological form of the tumor.",
                &[],
            ),
            e(
                "PAX7::FOXO1 Fusion",
                "https://www.researchgate.net/mock/pax7-foxo1",
                "PAX7::FOXO1 is the less common alveolar rhabdomyosarcoma fusion.",
                &["PAX7-FOXO1"],
                "The less common fusion variant of the aggressive subtype.",
                &[],
            ),
        ])
    }

    /// A random world of `n` synthetic entities. Every entity links to
    /// several others with scores drawn from a coarse grid, so ties occur,
    /// and about one in five entities leaks its name on the first
    /// composition attempt.
    pub fn random(seed: u64, n: usize) -> Self {
        const ONSETS: &[&str] = &["Vel", "Mor", "Tas", "Quin", "Dor", "Pel", "Zar", "Lum", "Cor", "Fen", "Gal", "Hex"];
        const MIDS: &[&str] = &["a", "o", "i", "e", "u", "ae"];
        const CODAS: &[&str] = &["tan", "rix", "vil", "mon", "cet", "dral", "phos", "lin", "zor", "bek"];
        const KINDS: &[&str] = &["Syndrome", "Disease", "Inhibitor", "Protein", "Receptor", "Deficiency", "Agonist", "Variant"];
        const RELATIONS: &[&str] = &["is treated by", "is caused by", "activates", "is a marker of", "inhibits", "is associated with"];
        const DOMAINS: &[&str] = &[
            "pubmed.ncbi.nlm.nih.gov", "www.nejm.org", "www.uptodate.com", "www.mayoclinic.org",
            "www.amboss.com", "www.cdc.gov", "www.researchgate.net", "en.wikipedia.org",
        ];

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(n);
        let mut seen = std::collections::BTreeSet::new();
        while names.len() < n {
            let name = format!(
                "{}{}{} {}",
                ONSETS.choose(&mut rng).unwrap(),
                MIDS.choose(&mut rng).unwrap(),
                CODAS.choose(&mut rng).unwrap(),
                KINDS.choose(&mut rng).unwrap()
            );
            let stem = name.split(' ').next().unwrap().to_lowercase();
            if seen.insert(stem) {
                names.push(name);
            }
        }
        let entities = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let kind = name.rsplit(' ').next().unwrap().to_lowercase();
                let degree = rng.random_range(4..=7);
                let neighbors: Vec<Candidate> = (0..degree)
                    .map(|_| {
                        let j = rng.random_range(0..n);
                        let relation = RELATIONS.choose(&mut rng).unwrap().to_string();
                        Candidate {
                            name: names[j].clone(),
                            rationale: format!("{name} {relation} {}.", names[j]),
                            relation,
                            score: rng.random_range(1..=9) as f64 / 10.0,
                        }
                    })
                    .filter(|c| c.name != *name)
                    .collect();
                let prevalence = rng.random_range(1..=400) as f64 / 10.0;
                let count = rng.random_range(2..=900);
                let onset = rng.random_range(1..=80);
                let description = format!(
                    "a {kind} with a prevalence near {prevalence}% in affected cohorts, about {count} documented interactions and typical onset around age {onset}"
                );
                let stem = name.split(' ').next().unwrap();
                WorldEntity {
                    name: name.clone(),
                    url: format!("https://{}/mock/entity-{i}", DOMAINS[i % DOMAINS.len()]),
                    summary: format!(
                        "{name} is {description}. It is linked to {}.",
                        neighbors.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
                    ),
                    aliases: vec![format!("{}-{i}", stem.to_uppercase())],
                    leaky_description: (rng.random_range(0..5) == 0).then(|| format!("{name}, {description}")),
                    description,
                    neighbors,
                    unsound: false,
                    ambiguous: false,
                }
            })
            .collect();
        Self::new(entities)
    }
}

impl SynthBackend for TableSynth {
    fn describe_entity(&self, name: &str, _sources: &[SourceDoc]) -> Result<EntityFacts, SynthError> {
        let e = self.lookup(name)?;
        Ok(EntityFacts { summary: e.summary.clone(), aliases: e.aliases.clone() })
    }

    fn next_hops(&self, chain: &[EntityNode]) -> Result<Vec<Candidate>, SynthError> {
        let last = chain.last().ok_or_else(|| SynthError::Backend("empty chain".into()))?;
        Ok(self.lookup(&last.name)?.neighbors.clone())
    }

    fn compose(&self, chain: &MedicalChain, attempt: u32) -> Result<Composition, SynthError> {
        let descriptions = chain
            .nodes
            .iter()
            .map(|n| {
                let e = self.lookup(&n.name)?;
                Ok(match (&e.leaky_description, attempt) {
                    (Some(leaky), 0) => leaky.clone(),
                    _ => e.description.clone(),
                })
            })
            .collect::<Result<Vec<_>, SynthError>>()?;
        let question = if chain.nodes.iter().all(|n| self.lookup(&n.name).is_ok_and(|e| e.description.ends_with('.'))) {
            descriptions.join(" ")
        } else {
            let steps: Vec<String> = descriptions
                .iter()
                .enumerate()
                .map(|(i, d)| format!("({}) {d}", i + 1))
                .collect();
            format!(
                "Each entity below is linked to the next: {}. Which entity is described last?",
                steps.join("; ")
            )
        };
        Ok(Composition { descriptions, question })
    }

    fn judge_quality(&self, qa: &MedSearchQA) -> Result<QualityJudgement, SynthError> {
        let links_sound = qa
            .chain
            .nodes
            .iter()
            .skip(1)
            .map(|n| self.lookup(&n.name).map(|e| !e.unsound))
            .collect::<Result<Vec<_>, _>>()?;
        let unique_answer = !self.lookup(&qa.chain.terminal().name)?.ambiguous;
        let reason = if links_sound.iter().all(|&ok| ok) && unique_answer {
            "every link is supported and the answer is unique".to_string()
        } else {
            "table flags".to_string()
        };
        Ok(QualityJudgement { links_sound, unique_answer, reason })
    }
}
