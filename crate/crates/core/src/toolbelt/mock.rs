//! In-memory web and an extractive summarizer for offline runs.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, GenerateRequest, ModelBackend};
use crate::jsonl;

use super::providers::{PageFetcher, SearchHit, SearchProvider, ToolError};
use super::visit::{split_summary_prompt, SummaryFields};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockPage {
    pub url: String,
    pub title: String,
    pub content: String,
}

/// A fixed page corpus answering searches by keyword overlap.
#[derive(Debug, Default)]
pub struct MockWeb {
    pages: Vec<MockPage>,
    index: Vec<BTreeSet<String>>,
    unreachable: HashSet<String>,
    max_results: usize,
    fetches: AtomicUsize,
    searches: AtomicUsize,
}

const STOPWORDS: &[&str] = &[
    "the", "and", "for", "with", "that", "this", "from", "into", "which", "what", "most", "are",
    "was", "were", "find", "mention", "specific", "about", "does", "how", "its", "their", "than",
    "of", "in", "on", "to", "by", "or", "an", "a", "is", "be", "as", "at",
];

/// Lower-cased alphanumeric words of `text` minus stopwords.
pub fn keywords(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() > 1)
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split_inclusive(['.', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

impl MockWeb {
    pub fn new(pages: Vec<MockPage>) -> Self {
        let index = pages.iter().map(|p| keywords(&format!("{} {}", p.title, p.content))).collect();
        Self { pages, index, max_results: 10, ..Self::default() }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let decoded = jsonl::read_file::<MockPage>(path)?;
        if let Some(e) = decoded.errors.first() {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()));
        }
        Ok(Self::new(decoded.records))
    }

    pub fn with_max_results(mut self, n: usize) -> Self {
        self.max_results = n;
        self
    }

    /// Fetches of `url` fail as if the host were down.
    pub fn mark_unreachable(mut self, url: &str) -> Self {
        self.unreachable.insert(url.to_string());
        self
    }

    pub fn pages(&self) -> &[MockPage] {
        &self.pages
    }

    pub fn fetch_count(&self) -> usize {
        self.fetches.load(Ordering::SeqCst)
    }

    pub fn search_count(&self) -> usize {
        self.searches.load(Ordering::SeqCst)
    }

    fn snippet(content: &str, terms: &BTreeSet<String>) -> String {
        let best = sentences(content)
            .enumerate()
            .max_by_key(|(i, s)| (keywords(s).intersection(terms).count(), std::cmp::Reverse(*i)))
            .map(|(_, s)| s)
            .unwrap_or("");
        best.chars().take(300).collect()
    }
}

impl SearchProvider for MockWeb {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, ToolError> {
        self.searches.fetch_add(1, Ordering::SeqCst);
        let terms = keywords(query);
        let mut scored: Vec<(usize, &MockPage)> = self
            .pages
            .iter()
            .zip(&self.index)
            .map(|(p, words)| (words.intersection(&terms).count(), p))
            .filter(|(score, _)| *score > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.url.cmp(&b.1.url)));
        Ok(scored
            .into_iter()
            .take(self.max_results)
            .map(|(_, p)| SearchHit {
                url: p.url.clone(),
                title: p.title.clone(),
                snippet: Self::snippet(&p.content, &terms),
            })
            .collect())
    }
}

impl PageFetcher for MockWeb {
    fn fetch(&self, url: &str) -> Result<String, ToolError> {
        self.fetches.fetch_add(1, Ordering::SeqCst);
        if self.unreachable.contains(url) {
            return Err(ToolError::Unreachable(url.to_string()));
        }
        self.pages
            .iter()
            .find(|p| p.url == url)
            .map(|p| p.content.clone())
            .ok_or_else(|| ToolError::NotFound(url.to_string()))
    }
}

/// Summarizer that quotes the sentences sharing a keyword with the goal.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveSummarizer;

impl ExtractiveSummarizer {
    pub fn summarize(content: &str, goal: &str) -> SummaryFields {
        let terms = keywords(goal);
        let hits: Vec<&str> = sentences(content)
            .filter(|s| terms.is_empty() || keywords(s).intersection(&terms).next().is_some())
            .collect();
        if hits.is_empty() {
            return SummaryFields {
                rational: "No section of the page addresses the goal.".to_string(),
                evidence: String::new(),
                summary: "The page contains no information relevant to the goal.".to_string(),
            };
        }
        let matched: Vec<&str> = terms.iter().map(String::as_str).collect();
        SummaryFields {
            rational: format!(
                "{} passage(s) mention goal terms ({}).",
                hits.len(),
                matched.join(", ")
            ),
            evidence: hits.join(" "),
            summary: hits.iter().take(2).copied().collect::<Vec<_>>().join(" "),
        }
    }
}

impl ModelBackend for ExtractiveSummarizer {
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, BackendError> {
        let (content, goal) = split_summary_prompt(req.last_user())
            .ok_or_else(|| BackendError::Malformed("not a summary prompt".into()))?;
        Ok(serde_json::to_string(&Self::summarize(content, goal)).expect("serializes"))
    }
}
