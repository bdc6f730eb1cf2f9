//! Function-calling schemas of the `search` and `visit` tools and the
//! validator for tool-call bodies.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const SEARCH_MIN_QUERIES: usize = 1;
pub const SEARCH_MAX_QUERIES: usize = 5;
pub const VISIT_MIN_URLS: usize = 1;
pub const VISIT_MAX_URLS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolCallError {
    #[error("malformed tool call: {0}")]
    Parse(String),
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub queries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRequest {
    pub urls: Vec<String>,
    pub goal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum ToolRequest {
    Search(SearchRequest),
    Visit(VisitRequest),
}

impl ToolRequest {
    pub fn name(&self) -> &'static str {
        match self {
            ToolRequest::Search(_) => "search",
            ToolRequest::Visit(_) => "visit",
        }
    }

    /// Canonical tool-call body, as the policy would emit it.
    pub fn to_body(&self) -> String {
        let args = match self {
            ToolRequest::Search(s) => serde_json::json!({ "query": s.queries }),
            ToolRequest::Visit(v) => match &v.goal {
                Some(goal) => serde_json::json!({ "url": v.urls, "goal": goal }),
                None => serde_json::json!({ "url": v.urls }),
            },
        };
        serde_json::json!({ "name": self.name(), "arguments": args }).to_string()
    }
}

/// The two tool definitions in chat-completions function format.
pub fn tool_schemas() -> Value {
    serde_json::json!([
        {
            "type": "function",
            "function": {
                "name": "search",
                "description": "Perform Google web searches and return top results.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "query": {
                            "type": "array",
                            "items": { "type": "string" },
                            "description": "Array of query strings (1-5 queries).",
                            "minItems": 1,
                            "maxItems": 5
                        }
                    },
                    "required": [ "query" ]
                }
            }
        },
        {
            "type": "function",
            "function": {
                "name": "visit",
                "description": "Visit webpage(s) and return summary.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "url": {
                            "type": "array",
                            "items": { "type": "string" },
                            "description": "The URL(s) to visit (1-3 URLs).",
                            "minItems": 1,
                            "maxItems": 3
                        },
                        "goal": { "type": "string" }
                    },
                    "required": [ "url" ]
                }
            }
        }
    ])
}

/// Parses and validates the text inside a tool-call block.
///
/// The body must be a JSON object `{"name": ..., "arguments": {...}}`.
/// Properties not named by the schema are ignored, as JSON Schema allows.
/// Query and url strings must additionally be non-blank.
pub fn validate_tool_call(body: &str) -> Result<ToolRequest, ToolCallError> {
    let value: Value =
        serde_json::from_str(body.trim()).map_err(|e| ToolCallError::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ToolCallError::Parse("tool call is not a JSON object".into()))?;
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| ToolCallError::Parse("missing string field \"name\"".into()))?;
    if name != "search" && name != "visit" {
        return Err(ToolCallError::UnknownTool(name.to_string()));
    }
    let args = match obj.get("arguments") {
        Some(Value::Object(map)) => map,
        Some(_) => {
            return Err(ToolCallError::SchemaViolation("\"arguments\" must be an object".into()))
        }
        None => return Err(ToolCallError::SchemaViolation("missing \"arguments\"".into())),
    };
    match name {
        "search" => {
            let queries = string_array(args.get("query"), "query", SEARCH_MIN_QUERIES, SEARCH_MAX_QUERIES)?;
            Ok(ToolRequest::Search(SearchRequest { queries }))
        }
        _ => {
            let urls = string_array(args.get("url"), "url", VISIT_MIN_URLS, VISIT_MAX_URLS)?;
            let goal = match args.get("goal") {
                None => None,
                Some(Value::String(g)) => Some(g.clone()),
                Some(_) => {
                    return Err(ToolCallError::SchemaViolation("\"goal\" must be a string".into()))
                }
            };
            Ok(ToolRequest::Visit(VisitRequest { urls, goal }))
        }
    }
}

fn string_array(
    value: Option<&Value>,
    field: &str,
    min: usize,
    max: usize,
) -> Result<Vec<String>, ToolCallError> {
    let items = match value {
        None => return Err(ToolCallError::SchemaViolation(format!("missing required \"{field}\""))),
        Some(Value::Array(items)) => items,
        Some(_) => return Err(ToolCallError::SchemaViolation(format!("\"{field}\" must be an array"))),
    };
    if items.len() < min || items.len() > max {
        return Err(ToolCallError::SchemaViolation(format!(
            "\"{field}\" has {} items; expected {min} to {max}",
            items.len()
        )));
    }
    items
        .iter()
        .map(|item| match item {
            Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
            Value::String(_) => Err(ToolCallError::SchemaViolation(format!("blank \"{field}\" item"))),
            _ => Err(ToolCallError::SchemaViolation(format!("\"{field}\" items must be strings"))),
        })
        .collect()
}
