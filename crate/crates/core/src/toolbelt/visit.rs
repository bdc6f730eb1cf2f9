//! Goal-conditioned page summarization.

use serde::{Deserialize, Serialize};

use crate::backend::{generate_with_retry, GenerateRequest, Message, ModelBackend, Sampling};
use crate::trajectory::Tokenizer;

use super::chunk::chunk_content;

/// Prompt for the summary model. `{content}` and `{goal}` are substituted.
pub const SUMMARY_PROMPT: &str = "Please process the following webpage content and user goal to extract relevant information:

## **Webpage Content**
{content}

## **User Goal**
{goal}

## **Task Guidelines**
1. **Content Scanning for Rationale**: Locate the **specific sections/data** directly related to the user's goal within the webpage content.
2. **Key Extraction for Evidence**: Identify and extract the **most relevant information**. Ensure you do not miss any key details. Output the **full original context** as much as possible (it can exceed three paragraphs).
3. **Summary Output for Summary**: Organize into a concise paragraph with logical flow, prioritizing clarity, and assess the contribution of the information to the goal.

**Output Format**: JSON format containing \"rational\", \"evidence\", and \"summary\" fields.";

/// Characters of raw page text kept when the summarizer keeps failing.
const FALLBACK_CHARS: usize = 4_000;

pub fn summary_prompt(content: &str, goal: &str) -> String {
    SUMMARY_PROMPT
        .replacen("{content}", content, 1)
        .replacen("{goal}", goal, 1)
}

/// Inverse of [`summary_prompt`], for mocks that read their input back out
/// of the prompt.
pub fn split_summary_prompt(prompt: &str) -> Option<(&str, &str)> {
    let content_start = prompt.find("## **Webpage Content**\n")? + "## **Webpage Content**\n".len();
    let goal_header = prompt.rfind("\n\n## **User Goal**\n")?;
    let goal_start = goal_header + "\n\n## **User Goal**\n".len();
    let goal_end = prompt.rfind("\n\n## **Task Guidelines**")?;
    if content_start > goal_header || goal_start > goal_end {
        return None;
    }
    Some((&prompt[content_start..goal_header], &prompt[goal_start..goal_end]))
}

/// The summary model's structured output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryFields {
    pub rational: String,
    pub evidence: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitSummary {
    pub url: String,
    pub rational: String,
    pub evidence: String,
    pub summary: String,
    pub chunk_count: usize,
    /// Set when the summarizer output was unusable and raw page text was
    /// substituted.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
}

/// Extracts the first JSON object in `text`, tolerating code fences and
/// surrounding prose.
pub fn parse_json_object<T: serde::de::DeserializeOwned>(text: &str) -> Option<T> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

fn summarize_once(
    summarizer: &dyn ModelBackend,
    content: &str,
    goal: &str,
) -> Option<SummaryFields> {
    let messages = [Message::user(summary_prompt(content, goal))];
    let req = GenerateRequest {
        messages: &messages,
        sampling: Sampling { temperature: 0.0, max_tokens: None, seed: 0 },
        context: Default::default(),
    };
    // One retry on unparseable output.
    (0..2).find_map(|_| {
        generate_with_retry(summarizer, &req, 3)
            .ok()
            .and_then(|text| parse_json_object::<SummaryFields>(&text))
    })
}

/// Chunks `content`, summarizes every chunk, and when there is more than one
/// chunk runs a final pass over the concatenated chunk evidence.
pub fn summarize_page(
    url: &str,
    content: &str,
    goal: &str,
    chunk_tokens: usize,
    tokenizer: &dyn Tokenizer,
    summarizer: &dyn ModelBackend,
) -> VisitSummary {
    let mut chunks = chunk_content(content, chunk_tokens, tokenizer);
    if chunks.is_empty() {
        chunks.push(String::new());
    }
    let chunk_count = chunks.len();
    let mut parts = Vec::with_capacity(chunk_count);
    for chunk in &chunks {
        match summarize_once(summarizer, chunk, goal) {
            Some(fields) => parts.push(fields),
            None => return fallback(url, content, chunk_count),
        }
    }
    let merged = if chunk_count == 1 {
        parts.pop()
    } else {
        let evidence = parts
            .iter()
            .map(|p| p.evidence.trim())
            .filter(|e| !e.is_empty())
            .collect::<Vec<_>>()
            .join("\n\n");
        summarize_once(summarizer, &evidence, goal)
    };
    match merged {
        Some(f) => VisitSummary {
            url: url.to_string(),
            rational: f.rational,
            evidence: f.evidence,
            summary: f.summary,
            chunk_count,
            degraded: false,
        },
        None => fallback(url, content, chunk_count),
    }
}

fn fallback(url: &str, content: &str, chunk_count: usize) -> VisitSummary {
    log::warn!("summarizer output unusable for {url}; using truncated page text");
    let truncated: String = content.chars().take(FALLBACK_CHARS).collect();
    VisitSummary {
        url: url.to_string(),
        rational: "summarizer output unavailable; raw page text follows".to_string(),
        evidence: truncated.clone(),
        summary: truncated,
        chunk_count,
        degraded: true,
    }
}

pub fn render_visit(summary: &VisitSummary, goal: &str) -> String {
    let mut out = format!(
        "The useful information in {} for user goal {} as follows: \n\nEvidence in page: \n{}\n\nSummary: \n{}\n",
        summary.url, goal, summary.evidence, summary.summary
    );
    if summary.degraded {
        out.push_str("[warning: summary unavailable, page text truncated]\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_round_trips_through_split() {
        let p = summary_prompt("page text\nwith lines", "find x");
        assert_eq!(split_summary_prompt(&p), Some(("page text\nwith lines", "find x")));
        assert!(p.contains("\"rational\", \"evidence\", and \"summary\" fields"));
    }

    #[test]
    fn json_object_in_fences() {
        let text = "```json\n{\"rational\":\"r\",\"evidence\":\"e\",\"summary\":\"s\"}\n```";
        let f: SummaryFields = parse_json_object(text).unwrap();
        assert_eq!(f.summary, "s");
        assert!(parse_json_object::<SummaryFields>("no json").is_none());
    }
}
