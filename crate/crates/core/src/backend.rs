//! Chat-style model backends.
//!
//! Every LLM-dependent step (the policy, the page summarizer, judges and the
//! synthesis prompts) goes through [`ModelBackend`]. The scripted and
//! closure backends make all of them deterministic under test.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no scripted reply for {0}")]
    MissingScript(String),
    #[error("scripted failure for {0}")]
    ScriptedFailure(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { temperature: 1.0, max_tokens: None, seed: 0 }
    }
}

/// Where a call comes from. Scripted backends key their replies on it; live
/// backends ignore it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallContext {
    pub question_id: String,
    pub rollout_index: usize,
    pub turn_index: u32,
}

impl fmt::Display for CallContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "question {:?} rollout {} turn {}",
            self.question_id, self.rollout_index, self.turn_index
        )
    }
}

#[derive(Debug, Clone)]
pub struct GenerateRequest<'a> {
    pub messages: &'a [Message],
    pub sampling: Sampling,
    pub context: CallContext,
}

impl<'a> GenerateRequest<'a> {
    pub fn new(messages: &'a [Message]) -> Self {
        Self { messages, sampling: Sampling::default(), context: CallContext::default() }
    }

    /// Content of the last user message, which is where single-shot prompts
    /// (summaries, judges) put their payload.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_logprobs: bool,
}

pub trait ModelBackend: Send + Sync {
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, BackendError>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    /// Live backends get transport retries; mocks never do.
    fn is_live(&self) -> bool {
        false
    }
}

impl<T: ModelBackend + ?Sized> ModelBackend for Arc<T> {
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, BackendError> {
        (**self).generate(req)
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn is_live(&self) -> bool {
        (**self).is_live()
    }
}

impl<T: ModelBackend + ?Sized> ModelBackend for &T {
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, BackendError> {
        (**self).generate(req)
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn is_live(&self) -> bool {
        (**self).is_live()
    }
}

/// Calls `backend` up to `attempts` times, stopping at the first success.
/// Only live backends are retried.
pub fn generate_with_retry(
    backend: &dyn ModelBackend,
    req: &GenerateRequest<'_>,
    attempts: u32,
) -> Result<String, BackendError> {
    let attempts = if backend.is_live() { attempts.max(1) } else { 1 };
    let mut last = None;
    for i in 0..attempts {
        match backend.generate(req) {
            Ok(text) => return Ok(text),
            Err(e) => {
                log::warn!("backend call failed ({}/{attempts}): {e}", i + 1);
                last = Some(e);
                if i + 1 < attempts {
                    std::thread::sleep(Duration::from_millis(250 << i));
                }
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptStep {
    Reply(String),
    Fail,
}

/// One line of a script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub question_id: String,
    /// Restricts the entry to one rollout of a group; absent means any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<usize>,
    pub turn: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fail: bool,
}

/// Replays fixed replies keyed by `(question_id, rollout, turn)`, falling
/// back to `(question_id, any rollout, turn)`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    steps: HashMap<(String, Option<usize>, u32), ScriptStep>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply(mut self, question_id: &str, turn: u32, text: impl Into<String>) -> Self {
        self.insert(question_id, None, turn, ScriptStep::Reply(text.into()));
        self
    }

    pub fn reply_for(
        mut self,
        question_id: &str,
        rollout: usize,
        turn: u32,
        text: impl Into<String>,
    ) -> Self {
        self.insert(question_id, Some(rollout), turn, ScriptStep::Reply(text.into()));
        self
    }

    pub fn fail_for(mut self, question_id: &str, rollout: usize, turn: u32) -> Self {
        self.insert(question_id, Some(rollout), turn, ScriptStep::Fail);
        self
    }

    pub fn insert(&mut self, question_id: &str, rollout: Option<usize>, turn: u32, step: ScriptStep) {
        self.steps.insert((question_id.to_string(), rollout, turn), step);
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut backend = Self::new();
        for e in entries {
            let step = match (e.fail, e.reply) {
                (true, _) | (false, None) => ScriptStep::Fail,
                (false, Some(text)) => ScriptStep::Reply(text),
            };
            backend.insert(&e.question_id, e.rollout, e.turn, step);
        }
        backend
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let decoded = jsonl::read_file::<ScriptEntry>(path)
            .map_err(|e| BackendError::Malformed(format!("{}: {e}", path.display())))?;
        let entries = decoded
            .into_result()
            .map_err(|e| BackendError::Malformed(format!("{}: {e}", path.display())))?;
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl ModelBackend for ScriptedBackend {
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, BackendError> {
        let ctx = &req.context;
        let exact = (ctx.question_id.clone(), Some(ctx.rollout_index), ctx.turn_index);
        let any = (ctx.question_id.clone(), None, ctx.turn_index);
        match self.steps.get(&exact).or_else(|| self.steps.get(&any)) {
            Some(ScriptStep::Reply(text)) => Ok(text.clone()),
            Some(ScriptStep::Fail) => Err(BackendError::ScriptedFailure(ctx.to_string())),
            None => Err(BackendError::MissingScript(ctx.to_string())),
        }
    }
}

type GenerateFn = dyn Fn(&GenerateRequest<'_>) -> Result<String, BackendError> + Send + Sync;

/// A backend defined by a closure.
#[derive(Clone)]
pub struct FnBackend {
    f: Arc<GenerateFn>,
}

impl FnBackend {
    pub fn new(
        f: impl Fn(&GenerateRequest<'_>) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self { f: Arc::new(f) }
    }

    /// Always replies with `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(text.clone()))
    }
}

impl fmt::Debug for FnBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnBackend")
    }
}

impl ModelBackend for FnBackend {
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, BackendError> {
        (self.f)(req)
    }
}

/// OpenAI-compatible `/chat/completions` client.
#[derive(Debug, Clone)]
pub struct ChatCompletionsBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl ChatCompletionsBackend {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            client,
        })
    }

    /// Lists models; used as a no-op reachability probe.
    pub fn probe(&self) -> Result<(), BackendError> {
        let mut req = self.client.get(format!("{}/models", self.endpoint));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(BackendError::Status { status: resp.status().as_u16(), body: String::new() })
        }
    }
}

impl ModelBackend for ChatCompletionsBackend {
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, BackendError> {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": req.messages,
            "temperature": req.sampling.temperature,
            "seed": req.sampling.seed,
        });
        if let Some(max) = req.sampling.max_tokens {
            body["max_tokens"] = max.into();
        }
        let mut http = self
            .client
            .post(format!("{}/chat/completions", self.endpoint))
            .json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status { status: status.as_u16(), body: text });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
    }

    fn is_live(&self) -> bool {
        true
    }
}
