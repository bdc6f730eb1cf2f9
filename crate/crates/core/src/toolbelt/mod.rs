//! The `search` and `visit` tools.
//!
//! Tool failures never abort a rollout: they are rendered into the tool
//! response text, where the agent can see them and react.

mod cache;
mod chunk;
pub mod mock;
mod providers;
mod schema;
mod visit;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::ModelBackend;
use crate::trajectory::{Tokenizer, WhitespaceTokenizer};

pub use cache::{CachedPage, PageCache};
pub use chunk::{chunk_content, DEFAULT_CHUNK_TOKENS};
pub use providers::{
    PageFetcher, ReaderFetcher, RetryPolicy, SearchHit, SearchProvider, SerperSearch, TokenBucket,
    ToolError,
};
pub use schema::{
    tool_schemas, validate_tool_call, SearchRequest, ToolCallError, ToolRequest, VisitRequest,
    SEARCH_MAX_QUERIES, SEARCH_MIN_QUERIES, VISIT_MAX_URLS, VISIT_MIN_URLS,
};
pub use visit::{
    parse_json_object, render_visit, split_summary_prompt, summarize_page, summary_prompt,
    SummaryFields, VisitSummary, SUMMARY_PROMPT,
};

/// Hits for one query, or the error that query produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResults {
    pub query: String,
    pub outcome: Result<Vec<SearchHit>, ToolError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitOutcome {
    pub url: String,
    pub outcome: Result<VisitSummary, ToolError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub chunk_tokens: usize,
    /// Refuse `visit` calls, leaving a search-only agent.
    pub search_only: bool,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self { chunk_tokens: DEFAULT_CHUNK_TOKENS, search_only: false }
    }
}

/// Search provider, page fetcher, summarizer and page cache bundled behind
/// one tool-execution entry point. Safe to share across rollouts.
#[derive(Clone)]
pub struct Toolbelt {
    search: Arc<dyn SearchProvider>,
    fetcher: Arc<dyn PageFetcher>,
    summarizer: Arc<dyn ModelBackend>,
    cache: Arc<PageCache>,
    tokenizer: Arc<dyn Tokenizer>,
    config: ToolConfig,
}

impl Toolbelt {
    pub fn new(
        search: Arc<dyn SearchProvider>,
        fetcher: Arc<dyn PageFetcher>,
        summarizer: Arc<dyn ModelBackend>,
        cache: Arc<PageCache>,
    ) -> Self {
        Self {
            search,
            fetcher,
            summarizer,
            cache,
            tokenizer: Arc::new(WhitespaceTokenizer),
            config: ToolConfig::default(),
        }
    }

    /// Offline toolbelt over a [`mock::MockWeb`] with the extractive
    /// summarizer.
    pub fn mock(web: Arc<mock::MockWeb>) -> Self {
        Self::new(
            web.clone(),
            web,
            Arc::new(mock::ExtractiveSummarizer),
            Arc::new(PageCache::new()),
        )
    }

    pub fn with_config(mut self, config: ToolConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn with_summarizer(mut self, summarizer: Arc<dyn ModelBackend>) -> Self {
        self.summarizer = summarizer;
        self
    }

    pub fn cache(&self) -> &Arc<PageCache> {
        &self.cache
    }

    pub fn config(&self) -> ToolConfig {
        self.config
    }

    /// One result list per query, in query order.
    pub fn search(&self, req: &SearchRequest) -> Vec<QueryResults> {
        let policy = RetryPolicy::for_provider(self.search.is_live());
        req.queries
            .iter()
            .map(|q| QueryResults {
                query: q.clone(),
                outcome: policy.run(|| self.search.search(q)),
            })
            .collect()
    }

    /// Page text, from the cache when present.
    pub fn fetch_cached(&self, url: &str) -> Result<String, ToolError> {
        if let Some(content) = self.cache.get(url) {
            return Ok(content);
        }
        let policy = RetryPolicy::for_provider(self.fetcher.is_live());
        let content = policy.run(|| self.fetcher.fetch(url))?;
        Ok(self.cache.insert(url, content))
    }

    /// One summary per url, in url order.
    pub fn visit(&self, req: &VisitRequest) -> Vec<VisitOutcome> {
        let goal = req.goal.as_deref().unwrap_or("");
        req.urls
            .iter()
            .map(|url| VisitOutcome {
                url: url.clone(),
                outcome: self.fetch_cached(url).map(|content| {
                    summarize_page(
                        url,
                        &content,
                        goal,
                        self.config.chunk_tokens,
                        self.tokenizer.as_ref(),
                        self.summarizer.as_ref(),
                    )
                }),
            })
            .collect()
    }

    /// Validates and runs a raw tool-call body, returning the tool-response
    /// text.
    pub fn execute(&self, body: &str) -> String {
        match validate_tool_call(body) {
            Ok(ToolRequest::Search(req)) => render_search(&self.search(&req)),
            Ok(ToolRequest::Visit(_)) if self.config.search_only => {
                "[tool error] visit is not available to this agent".to_string()
            }
            Ok(ToolRequest::Visit(req)) => {
                render_visits(&self.visit(&req), req.goal.as_deref().unwrap_or(""))
            }
            Err(e) => format!("[tool error] {e}"),
        }
    }
}

pub fn render_search(results: &[QueryResults]) -> String {
    results
        .iter()
        .map(|r| match &r.outcome {
            Ok(hits) if hits.is_empty() => {
                format!("No results found for '{}'. Try a more general query.", r.query)
            }
            Ok(hits) => {
                let mut out = format!(
                    "A search for '{}' found {} results:\n\n## Web Results\n",
                    r.query,
                    hits.len()
                );
                for (i, h) in hits.iter().enumerate() {
                    out.push_str(&format!(
                        "{}. Title: {}\n   URL: {}\n   Snippet: {}\n",
                        i + 1,
                        h.title,
                        h.url,
                        h.snippet
                    ));
                }
                out
            }
            Err(e) => format!("[search error] '{}': {e}", r.query),
        })
        .collect::<Vec<_>>()
        .join("\n=======\n")
}

pub fn render_visits(outcomes: &[VisitOutcome], goal: &str) -> String {
    outcomes
        .iter()
        .map(|o| match &o.outcome {
            Ok(summary) => render_visit(summary, goal),
            Err(e) => format!("[visit error] {}: {e}\n", o.url),
        })
        .collect::<Vec<_>>()
        .join("\n=======\n")
}
