//! Search and page-fetch backends, retry policy and rate limiting.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ToolError {
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("quota exceeded: {0}")]
    QuotaExceeded(String),
    #[error("page not found: {0}")]
    NotFound(String),
    #[error("provider error: {0}")]
    Provider(String),
}

impl ToolError {
    fn is_transient(&self) -> bool {
        matches!(self, ToolError::Unreachable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub url: String,
    pub title: String,
    pub snippet: String,
}

pub trait SearchProvider: Send + Sync {
    /// Ranked hits for one query.
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, ToolError>;

    fn is_live(&self) -> bool {
        false
    }
}

pub trait PageFetcher: Send + Sync {
    /// Full text of the page at `url`.
    fn fetch(&self, url: &str) -> Result<String, ToolError>;

    fn is_live(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl RetryPolicy {
    pub const NONE: RetryPolicy = RetryPolicy { retries: 0, base_delay: Duration::ZERO };

    /// Two retries with exponential backoff for live providers, none for
    /// mocks.
    pub fn for_provider(live: bool) -> Self {
        if live {
            RetryPolicy { retries: 2, base_delay: Duration::from_millis(500) }
        } else {
            Self::NONE
        }
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ToolError>) -> Result<T, ToolError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt < self.retries => {
                    std::thread::sleep(self.base_delay * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Token bucket: `capacity` requests in a burst, refilled at `per_second`.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: u32, per_second: f64) -> Self {
        assert!(capacity > 0 && per_second > 0.0, "token bucket needs positive rates");
        Self {
            capacity: capacity as f64,
            per_second,
            state: Mutex::new((capacity as f64, Instant::now())),
        }
    }

    /// Takes a token if one is available, else returns how long to wait.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut state = self.state.lock().expect("token bucket poisoned");
        let now = Instant::now();
        let elapsed = now.duration_since(state.1).as_secs_f64();
        state.0 = (state.0 + elapsed * self.per_second).min(self.capacity);
        state.1 = now;
        if state.0 >= 1.0 {
            state.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - state.0) / self.per_second))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}

fn http_client() -> Result<reqwest::blocking::Client, ToolError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(60))
        .build()
        .map_err(|e| ToolError::Provider(e.to_string()))
}

fn status_error(status: reqwest::StatusCode, what: &str) -> ToolError {
    match status.as_u16() {
        429 | 402 => ToolError::QuotaExceeded(format!("{what}: HTTP {status}")),
        404 => ToolError::NotFound(what.to_string()),
        s if s >= 500 => ToolError::Unreachable(format!("{what}: HTTP {status}")),
        _ => ToolError::Provider(format!("{what}: HTTP {status}")),
    }
}

/// Google results through a Serper-compatible endpoint.
#[derive(Debug)]
pub struct SerperSearch {
    endpoint: String,
    api_key: String,
    results: usize,
    limiter: TokenBucket,
    client: reqwest::blocking::Client,
}

impl SerperSearch {
    pub fn new(endpoint: &str, api_key: String, results: usize, limiter: TokenBucket) -> Result<Self, ToolError> {
        Ok(Self {
            endpoint: endpoint.to_string(),
            api_key,
            results,
            limiter,
            client: http_client()?,
        })
    }
}

impl SearchProvider for SerperSearch {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, ToolError> {
        self.limiter.acquire();
        let resp = self
            .client
            .post(&self.endpoint)
            .header("X-API-KEY", &self.api_key)
            .json(&serde_json::json!({ "q": query, "num": self.results }))
            .send()
            .map_err(|e| ToolError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(status_error(resp.status(), query));
        }
        let body: serde_json::Value =
            resp.json().map_err(|e| ToolError::Provider(e.to_string()))?;
        let hits = body["organic"]
            .as_array()
            .map(|items| {
                items
                    .iter()
                    .filter_map(|item| {
                        Some(SearchHit {
                            url: item["link"].as_str()?.to_string(),
                            title: item["title"].as_str().unwrap_or_default().to_string(),
                            snippet: item["snippet"].as_str().unwrap_or_default().to_string(),
                        })
                    })
                    .take(self.results)
                    .collect()
            })
            .unwrap_or_default();
        Ok(hits)
    }

    fn is_live(&self) -> bool {
        true
    }
}

/// Full-page text through a Jina-reader-compatible endpoint
/// (`GET {endpoint}/{url}`).
#[derive(Debug)]
pub struct ReaderFetcher {
    endpoint: String,
    api_key: Option<String>,
    limiter: TokenBucket,
    client: reqwest::blocking::Client,
}

impl ReaderFetcher {
    pub fn new(endpoint: &str, api_key: Option<String>, limiter: TokenBucket) -> Result<Self, ToolError> {
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key,
            limiter,
            client: http_client()?,
        })
    }
}

impl PageFetcher for ReaderFetcher {
    fn fetch(&self, url: &str) -> Result<String, ToolError> {
        self.limiter.acquire();
        let mut req = self.client.get(format!("{}/{}", self.endpoint, url));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ToolError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(status_error(resp.status(), url));
        }
        resp.text().map_err(|e| ToolError::Provider(e.to_string()))
    }

    fn is_live(&self) -> bool {
        true
    }
}
