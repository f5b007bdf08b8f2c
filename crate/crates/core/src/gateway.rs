//! Chat-completion and moderation access.
//!
//! A [`Gateway`] wraps a [`Backend`] with request defaults and an audit log.
//! Two backends ship: [`HttpBackend`] speaks the OpenAI-compatible
//! `chat/completions` + `moderations` JSON, and [`ScriptedBackend`] replays a
//! FIFO queue of replies for tests and offline replays.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{self, SharedClock};

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend returned an empty choice list")]
    EmptyChoices,
    #[error("malformed backend response: {0}")]
    Decode(String),
    #[error("script exhausted")]
    ScriptExhausted,
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must not be empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == Some(0) {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.model.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("model must be set".into()));
        }
        Ok(())
    }
}

/// Assistant text plus the backend's finish reason, passed through verbatim
/// (e.g. `"length"` when the backend truncated the reply).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default)]
    pub finish_reason: Option<String>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModerationVerdict {
    pub flagged: bool,
    #[serde(default)]
    pub category_scores: BTreeMap<String, f64>,
}

impl ModerationVerdict {
    pub fn pass() -> Self {
        Self::default()
    }

    pub fn flagged_for(category: impl Into<String>, score: f64) -> Self {
        let mut category_scores = BTreeMap::new();
        category_scores.insert(category.into(), score);
        Self {
            flagged: true,
            category_scores,
        }
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError>;
    fn moderate(&self, text: &str) -> Result<ModerationVerdict, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): initial, 2x, 4x, ...
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

/// OpenAI-compatible HTTP backend.
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            retry: RetryPolicy::default(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("reqwest client"),
        }
    }

    /// Reads the credential from `env_var`; a missing variable is an error.
    pub fn from_env(base_url: &str, env_var: &str) -> Result<Self, GatewayError> {
        let key = std::env::var(env_var)
            .map_err(|_| GatewayError::MissingCredential(env_var.to_string()))?;
        Ok(Self::new(base_url, Some(key)))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        let url = format!("{}/{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp
                        .text()
                        .map_err(|e| GatewayError::Decode(e.to_string()))?;
                    if !status.is_success() {
                        return Err(GatewayError::Status {
                            status: status.as_u16(),
                            body: text,
                        });
                    }
                    return serde_json::from_str(&text).map_err(|e| GatewayError::Decode(e.to_string()));
                }
                Err(e) if attempt < self.retry.max_attempts => {
                    let delay = self.retry.backoff(attempt);
                    warn!("POST {url} failed (attempt {attempt}): {e}; retrying in {delay:?}");
                    thread::sleep(delay);
                }
                Err(e) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct WireCompletion {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireModeration {
    results: Vec<ModerationVerdict>,
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let body = serde_json::to_value(request).map_err(|e| GatewayError::Decode(e.to_string()))?;
        let value = self.post("chat/completions", &body)?;
        let wire: WireCompletion =
            serde_json::from_value(value).map_err(|e| GatewayError::Decode(e.to_string()))?;
        let choice = wire.choices.into_iter().next().ok_or(GatewayError::EmptyChoices)?;
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            finish_reason: choice.finish_reason,
        })
    }

    fn moderate(&self, text: &str) -> Result<ModerationVerdict, GatewayError> {
        let value = self.post("moderations", &serde_json::json!({ "input": text }))?;
        let wire: WireModeration =
            serde_json::from_value(value).map_err(|e| GatewayError::Decode(e.to_string()))?;
        wire.results.into_iter().next().ok_or(GatewayError::EmptyChoices)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Reply(String),
    Fail { error: String },
}

/// File form of a script: either a bare JSON array of replies or an object
/// with replies and moderation verdicts.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Replies(Vec<ScriptStep>),
    Full {
        replies: Vec<ScriptStep>,
        #[serde(default)]
        verdicts: Vec<ModerationVerdict>,
    },
}

/// FIFO backend: the k-th completion returns the k-th scripted step.
///
/// Moderation pops from a separate verdict queue and passes once it is empty.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<ScriptStep>>,
    verdicts: Mutex<VecDeque<Result<ModerationVerdict, String>>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: Mutex::new(replies.into_iter().map(|s| ScriptStep::Reply(s.into())).collect()),
            verdicts: Mutex::default(),
        }
    }

    pub fn from_steps(steps: impl IntoIterator<Item = ScriptStep>) -> Self {
        Self {
            replies: Mutex::new(steps.into_iter().collect()),
            verdicts: Mutex::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: ScriptFile = serde_json::from_str(text)?;
        let backend = match file {
            ScriptFile::Replies(steps) => Self::from_steps(steps),
            ScriptFile::Full { replies, verdicts } => {
                let backend = Self::from_steps(replies);
                for v in verdicts {
                    backend.push_verdict(v);
                }
                backend
            }
        };
        Ok(backend)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn push_reply(&self, text: impl Into<String>) {
        self.replies.lock().unwrap().push_back(ScriptStep::Reply(text.into()));
    }

    pub fn push_failure(&self, message: impl Into<String>) {
        self.replies
            .lock()
            .unwrap()
            .push_back(ScriptStep::Fail { error: message.into() });
    }

    pub fn push_verdict(&self, verdict: ModerationVerdict) {
        self.verdicts.lock().unwrap().push_back(Ok(verdict));
    }

    pub fn push_moderation_failure(&self, message: impl Into<String>) {
        self.verdicts.lock().unwrap().push_back(Err(message.into()));
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, _request: &CompletionRequest) -> Result<Completion, GatewayError> {
        match self.replies.lock().unwrap().pop_front() {
            Some(ScriptStep::Reply(text)) => Ok(Completion::text(text)),
            Some(ScriptStep::Fail { error }) => Err(GatewayError::Scripted(error)),
            None => Err(GatewayError::ScriptExhausted),
        }
    }

    fn moderate(&self, _text: &str) -> Result<ModerationVerdict, GatewayError> {
        match self.verdicts.lock().unwrap().pop_front() {
            Some(Ok(v)) => Ok(v),
            Some(Err(e)) => Err(GatewayError::Scripted(e)),
            None => Ok(ModerationVerdict::pass()),
        }
    }
}

/// Backend computed from the request, e.g. an answer-key oracle.
pub struct ResponderBackend<F> {
    respond: F,
}

impl<F> ResponderBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        Self { respond }
    }
}

impl<F> Backend for ResponderBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        (self.respond)(request).map(Completion::text)
    }

    fn moderate(&self, _text: &str) -> Result<ModerationVerdict, GatewayError> {
        Ok(ModerationVerdict::pass())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: DateTime<Utc>,
    pub request: CompletionRequest,
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewaySettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

#[derive(Default)]
struct Audit {
    entries: Vec<AuditEntry>,
    sink: Option<BufWriter<File>>,
}

/// Shared entry point for every LLM call. Safe to use from many threads;
/// audit appends are serialized.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    settings: GatewaySettings,
    clock: SharedClock,
    audit: Mutex<Audit>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            settings: GatewaySettings::default(),
            clock: clock::system(),
            audit: Mutex::default(),
        }
    }

    pub fn scripted<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Arc::new(ScriptedBackend::new(replies)))
    }

    pub fn with_settings(mut self, settings: GatewaySettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_clock(mut self, clock: SharedClock) -> Self {
        self.clock = clock;
        self
    }

    /// Mirrors every audit entry to a JSONL file (appending).
    pub fn with_audit_file(self, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.audit.lock().unwrap().sink = Some(BufWriter::new(file));
        Ok(self)
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    /// Builds a request from the configured model, temperature and token limit.
    pub fn request(&self, messages: Vec<ChatMessage>) -> CompletionRequest {
        CompletionRequest {
            model: self.settings.model.clone(),
            messages,
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
        }
    }

    pub fn chat(&self, messages: Vec<ChatMessage>) -> Result<String, GatewayError> {
        let request = self.request(messages);
        self.complete(&request)
    }

    /// Runs one completion and records exactly one audit entry for it.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let outcome = request.validate().and_then(|_| self.backend.complete(request));
        let entry = AuditEntry {
            timestamp: self.clock.now(),
            request: request.clone(),
            response: outcome.as_ref().ok().map(|c| c.text.clone()),
            finish_reason: outcome.as_ref().ok().and_then(|c| c.finish_reason.clone()),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        };
        self.record(entry)?;
        outcome.map(|c| c.text)
    }

    /// Moderation never fails the caller: backend errors are logged and the
    /// text passes. Empty text passes without a backend call.
    pub fn moderate(&self, text: &str) -> ModerationVerdict {
        if text.is_empty() {
            return ModerationVerdict::pass();
        }
        match self.backend.moderate(text) {
            Ok(v) => v,
            Err(e) => {
                warn!("moderation backend failed, passing text unflagged: {e}");
                ModerationVerdict::pass()
            }
        }
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().unwrap().entries.clone()
    }

    pub fn audit_len(&self) -> usize {
        self.audit.lock().unwrap().entries.len()
    }

    fn record(&self, entry: AuditEntry) -> Result<(), GatewayError> {
        let mut audit = self.audit.lock().unwrap();
        if let Some(sink) = audit.sink.as_mut() {
            let line = serde_json::to_string(&entry).expect("audit entry serializes");
            writeln!(sink, "{line}")?;
            sink.flush()?;
        }
        debug!("audit #{}: {:?}", audit.entries.len() + 1, entry.response);
        audit.entries.push(entry);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest::new(DEFAULT_MODEL, vec![ChatMessage::user(text)])
    }

    #[test]
    fn scripted_queue_pops_in_order() {
        let gw = Gateway::scripted(["Hello", "World"]);
        assert_eq!(gw.complete(&req("a")).unwrap(), "Hello");
        assert_eq!(gw.complete(&req("b")).unwrap(), "World");
    }

    #[test]
    fn exhausted_script_is_an_error() {
        let gw = Gateway::scripted(Vec::<String>::new());
        let err = gw.complete(&req("a")).unwrap_err();
        assert_eq!(err.to_string(), "script exhausted");
    }

    #[test]
    fn request_defaults_to_temperature_zero() {
        let r = req("x");
        assert_eq!(r.temperature, 0.0);
        assert_eq!(r.max_tokens, None);
        let gw = Gateway::scripted(["ok"]);
        assert_eq!(gw.request(vec![ChatMessage::user("x")]).temperature, 0.0);
    }

    #[test]
    fn empty_messages_rejected_and_audited() {
        let gw = Gateway::scripted(["unused"]);
        let bad = CompletionRequest::new(DEFAULT_MODEL, vec![]);
        assert!(matches!(gw.complete(&bad), Err(GatewayError::InvalidRequest(_))));
        assert_eq!(gw.audit_len(), 1);
        assert!(gw.audit_log()[0].error.is_some());
    }

    #[test]
    fn negative_temperature_rejected() {
        let mut r = req("x");
        r.temperature = -0.5;
        assert!(r.validate().is_err());
        r.temperature = f64::NAN;
        assert!(r.validate().is_err());
    }

    #[test]
    fn empty_text_passes_moderation_without_backend_call() {
        let backend = Arc::new(ScriptedBackend::new(Vec::<String>::new()));
        backend.push_verdict(ModerationVerdict::flagged_for("violence", 0.97));
        let gw = Gateway::new(backend.clone());
        assert!(!gw.moderate("").flagged);
        // the queued verdict is still there for the next real call
        assert!(gw.moderate("something").flagged);
    }

    #[test]
    fn scripted_verdict_passthrough() {
        let backend = Arc::new(ScriptedBackend::default());
        let verdict = ModerationVerdict::flagged_for("violence", 0.97);
        backend.push_verdict(verdict.clone());
        let gw = Gateway::new(backend);
        assert_eq!(gw.moderate("text"), verdict);
    }

    #[test]
    fn moderation_failure_passes() {
        let backend = Arc::new(ScriptedBackend::default());
        backend.push_moderation_failure("503");
        let gw = Gateway::new(backend);
        assert_eq!(gw.moderate("Hello there"), ModerationVerdict::pass());
    }

    #[test]
    fn script_file_forms() {
        let plain = ScriptedBackend::from_json(r#"["a", {"error": "boom"}, "b"]"#).unwrap();
        assert_eq!(plain.remaining(), 3);
        let full = ScriptedBackend::from_json(
            r#"{"replies": ["a"], "verdicts": [{"flagged": true, "category_scores": {"hate": 0.9}}]}"#,
        )
        .unwrap();
        assert!(full.moderate("x").unwrap().flagged);
        assert!(matches!(plain.complete(&req("x")), Ok(c) if c.text == "a"));
        assert!(matches!(plain.complete(&req("x")), Err(GatewayError::Scripted(m)) if m == "boom"));
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(2), Duration::from_millis(1000));
        assert_eq!(p.backoff(3), Duration::from_millis(2000));
    }
}
