//! Text-completion client for the expansion LLM.
//!
//! [`LlmClient`] owns retry, backoff, concurrency and rate limiting; the wire
//! protocol lives behind [`Transport`]. Two transports ship: a
//! chat-completions HTTP transport and [`MockLlm`], a deterministic test
//! double whose output is a pure function of the prompt.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::hash::{fnv1a64, prompt_hash, FieldDigest};

pub const DEFAULT_CREDENTIAL_ENV: &str = "TCDE_LLM_API_KEY";
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MOCK_TOPICS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout: Duration,
}

impl CompletionRequest {
    fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max output length must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Connection settings for an HTTP provider. The credential is referenced
/// by environment-variable name and resolved at call time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub credential_env: String,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_concurrent_requests: usize,
    /// Token-bucket refill rate; `None` disables rate limiting.
    pub requests_per_second: Option<f64>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            credential_env: DEFAULT_CREDENTIAL_ENV.to_string(),
            max_retries: 3,
            backoff_base_ms: 500,
            max_concurrent_requests: 8,
            requests_per_second: None,
        }
    }
}

impl ProviderConfig {
    pub fn backoff_base(&self) -> Duration {
        Duration::from_millis(self.backoff_base_ms)
    }

    pub(crate) fn resolve_credential(&self) -> Result<String, ProviderError> {
        std::env::var(&self.credential_env)
            .map_err(|_| ProviderError::MissingCredential(self.credential_env.clone()))
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    #[error("provider still failing after {attempts} attempts (prompt {prompt_hash}): {last}")]
    RetriesExhausted {
        prompt_hash: String,
        attempts: u32,
        last: String,
    },
    #[error("malformed provider response (prompt {prompt_hash}): {message}")]
    Protocol { prompt_hash: String, message: String },
    #[error("provider request timed out (prompt {prompt_hash})")]
    Timeout { prompt_hash: String },
    #[error("provider rejected request with status {status} (prompt {prompt_hash})")]
    Rejected { prompt_hash: String, status: u16 },
    #[error("credential variable `{0}` is not set")]
    MissingCredential(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Failure reported by a single transport attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    RateLimited,
    Server(u16),
    Network(String),
    Timeout,
    Rejected(u16),
    Protocol(String),
}

impl TransportError {
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            TransportError::RateLimited | TransportError::Server(_) | TransportError::Network(_)
        )
    }

    fn describe(&self) -> String {
        match self {
            TransportError::RateLimited => "rate limited (429)".into(),
            TransportError::Server(s) => format!("server error {s}"),
            TransportError::Network(m) => format!("network: {m}"),
            TransportError::Timeout => "timeout".into(),
            TransportError::Rejected(s) => format!("rejected {s}"),
            TransportError::Protocol(m) => m.clone(),
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &CompletionRequest, credential: Option<&str>) -> Result<String, TransportError>;

    fn needs_credential(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

/// Runs `attempt` until it succeeds, fails permanently, or `max_retries`
/// retries have been spent. Backoff doubles on each retry.
pub(crate) fn with_retries<T>(
    policy: RetryPolicy,
    attempts: &AtomicU64,
    prompt_hash: &str,
    mut attempt: impl FnMut() -> Result<T, TransportError>,
) -> Result<T, ProviderError> {
    let mut made = 0u32;
    loop {
        made += 1;
        attempts.fetch_add(1, Ordering::Relaxed);
        let err = match attempt() {
            Ok(value) => return Ok(value),
            Err(err) => err,
        };
        if !err.is_retryable() {
            return Err(match err {
                TransportError::Timeout => ProviderError::Timeout {
                    prompt_hash: prompt_hash.to_string(),
                },
                TransportError::Rejected(status) => ProviderError::Rejected {
                    prompt_hash: prompt_hash.to_string(),
                    status,
                },
                other => ProviderError::Protocol {
                    prompt_hash: prompt_hash.to_string(),
                    message: other.describe(),
                },
            });
        }
        if made > policy.max_retries {
            return Err(ProviderError::RetriesExhausted {
                prompt_hash: prompt_hash.to_string(),
                attempts: made,
                last: err.describe(),
            });
        }
        let delay = policy.backoff_base.saturating_mul(1u32 << (made - 1).min(16));
        log::debug!("prompt {prompt_hash}: {} on attempt {made}, retrying in {delay:?}", err.describe());
        if !delay.is_zero() {
            thread::sleep(delay);
        }
    }
}

/// Bounds in-flight requests and optionally paces them with a token bucket.
pub(crate) struct Throttle {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
    bucket: Option<Mutex<Bucket>>,
}

struct Bucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

pub(crate) struct Permit<'a>(&'a Throttle);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap();
        *n -= 1;
        self.0.freed.notify_one();
    }
}

impl Throttle {
    pub(crate) fn new(limit: usize, requests_per_second: Option<f64>) -> Self {
        let bucket = requests_per_second.filter(|r| *r > 0.0).map(|rate| {
            let capacity = rate.max(1.0);
            Mutex::new(Bucket {
                rate,
                capacity,
                tokens: capacity,
                last: Instant::now(),
            })
        });
        Self {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
            bucket,
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        {
            let mut n = self.in_flight.lock().unwrap();
            while *n >= self.limit {
                n = self.freed.wait(n).unwrap();
            }
            *n += 1;
        }
        if let Some(bucket) = &self.bucket {
            loop {
                let wait = {
                    let mut b = bucket.lock().unwrap();
                    let now = Instant::now();
                    let refill = now.duration_since(b.last).as_secs_f64() * b.rate;
                    b.tokens = (b.tokens + refill).min(b.capacity);
                    b.last = now;
                    if b.tokens >= 1.0 {
                        b.tokens -= 1.0;
                        None
                    } else {
                        Some(Duration::from_secs_f64((1.0 - b.tokens) / b.rate))
                    }
                };
                match wait {
                    None => break,
                    Some(d) => thread::sleep(d),
                }
            }
        }
        Permit(self)
    }
}

/// Completion client shared across worker threads.
pub struct LlmClient {
    config: ProviderConfig,
    transport: Box<dyn Transport>,
    throttle: Throttle,
    attempts: Arc<AtomicU64>,
    calls: AtomicU64,
}

impl LlmClient {
    pub fn new(config: ProviderConfig, transport: Box<dyn Transport>) -> Self {
        let throttle = Throttle::new(config.max_concurrent_requests, config.requests_per_second);
        Self {
            config,
            transport,
            throttle,
            attempts: Arc::new(AtomicU64::new(0)),
            calls: AtomicU64::new(0),
        }
    }

    pub fn http(config: ProviderConfig) -> Self {
        let transport = HttpTransport::new(config.endpoint.clone());
        Self::new(config, Box::new(transport))
    }

    pub fn mock(mock: MockLlm) -> Self {
        let config = ProviderConfig {
            backoff_base_ms: 0,
            ..ProviderConfig::default()
        };
        Self::new(config, Box::new(mock))
    }

    /// Replaces the attempt counter with a caller-owned one.
    pub fn with_attempt_counter(mut self, counter: Arc<AtomicU64>) -> Self {
        self.attempts = counter;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Transport attempts made so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    /// Calls to [`LlmClient::complete`] made so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let credential = if self.transport.needs_credential() {
            Some(self.config.resolve_credential()?)
        } else {
            None
        };
        let hash = prompt_hash(&request.prompt);
        let policy = RetryPolicy {
            max_retries: self.config.max_retries,
            backoff_base: self.config.backoff_base(),
        };
        let text = with_retries(policy, &self.attempts, &hash, || {
            let _permit = self.throttle.acquire();
            self.transport.send(request, credential.as_deref())
        })?;
        Ok(text.trim_end().to_string())
    }
}

/// Chat-completions style transport: one user message, the reply is
/// `choices[0].message.content`.
pub struct HttpTransport {
    endpoint: String,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
        }
    }
}

pub(crate) fn classify_ureq_error(err: ureq::Error) -> TransportError {
    match err {
        ureq::Error::Status(429, _) => TransportError::RateLimited,
        ureq::Error::Status(code, _) if code >= 500 => TransportError::Server(code),
        ureq::Error::Status(code, _) => TransportError::Rejected(code),
        ureq::Error::Transport(t) => {
            let message = t.to_string();
            if message.contains("timed out") {
                TransportError::Timeout
            } else {
                TransportError::Network(message)
            }
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &CompletionRequest, credential: Option<&str>) -> Result<String, TransportError> {
        let agent = ureq::AgentBuilder::new().timeout(request.timeout).build();
        let body = serde_json::json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let mut call = agent.post(&self.endpoint);
        if let Some(key) = credential {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let response = call.send_json(body).map_err(classify_ureq_error)?;
        let value: serde_json::Value = response
            .into_json()
            .map_err(|e| TransportError::Protocol(format!("response is not JSON: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| TransportError::Protocol("missing choices[0].message.content".into()))
    }
}

/// Canned topics returned by [`MockLlm`] when the prompt contains `match`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTopics {
    #[serde(rename = "match")]
    pub needle: String,
    pub topics: Vec<String>,
}

/// Deterministic offline LLM. Prompts matching a scripted entry get that
/// entry's topics; all others get [`mock_complete`] output.
#[derive(Debug, Clone, Default)]
pub struct MockLlm {
    scripted: Vec<ScriptedTopics>,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_scripted(scripted: Vec<ScriptedTopics>) -> Self {
        Self { scripted }
    }

    /// Loads scripted topics from a file with one `{"match":…,"topics":[…]}`
    /// record per line.
    pub fn from_fixture(path: impl AsRef<Path>) -> crate::Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        let mut scripted = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptedTopics = serde_json::from_str(line)
                .map_err(|e| crate::Error::format(path, i + 1, format!("invalid mock topic record: {e}")))?;
            scripted.push(entry);
        }
        Ok(Self { scripted })
    }

    /// Model id that changes whenever the scripted content does.
    pub fn model_id(&self) -> String {
        if self.scripted.is_empty() {
            return "mock".to_string();
        }
        let mut digest = FieldDigest::new();
        for entry in &self.scripted {
            digest.push(&entry.needle);
            for t in &entry.topics {
                digest.push(t);
            }
        }
        format!("mock-{}", &digest.hex()[..12])
    }

    pub fn respond(&self, prompt: &str) -> String {
        let Some(entry) = self.scripted.iter().find(|e| prompt.contains(&e.needle)) else {
            return mock_complete(prompt);
        };
        let n = requested_count(prompt).unwrap_or(DEFAULT_MOCK_TOPICS);
        entry
            .topics
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, t)| format!("{}. {t}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl Transport for MockLlm {
    fn send(&self, request: &CompletionRequest, _credential: Option<&str>) -> Result<String, TransportError> {
        Ok(self.respond(&request.prompt))
    }

    fn needs_credential(&self) -> bool {
        false
    }
}

fn count_pattern() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:generate|identify) (\d+) (?:diverse topic-focused documents|abstract topics)").unwrap()
    })
}

/// Topic count embedded in an expansion prompt. The instruction follows
/// the substituted source text, so the last match wins.
pub fn requested_count(prompt: &str) -> Option<usize> {
    count_pattern()
        .captures_iter(prompt)
        .last()
        .and_then(|c| c[1].parse().ok())
}

/// Pure mock completion: `N` lines `i. topic-<h8>-<i>` where `h8` is the first
/// eight hex digits of the prompt's FNV-1a-64 hash.
pub fn mock_complete(prompt: &str) -> String {
    let n = requested_count(prompt).unwrap_or_else(|| {
        log::warn!(
            "mock LLM: no topic count in prompt {}, defaulting to {DEFAULT_MOCK_TOPICS}",
            prompt_hash(prompt)
        );
        DEFAULT_MOCK_TOPICS
    });
    let h8 = &format!("{:016x}", fnv1a64(prompt.as_bytes()))[..8];
    (1..=n)
        .map(|i| format!("{i}. topic-{h8}-{i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Transport that replays a fixed sequence of outcomes, then repeats the last.
#[derive(Default)]
pub struct ScriptedTransport {
    outcomes: Mutex<VecDeque<Result<String, TransportError>>>,
}

impl ScriptedTransport {
    pub fn new(outcomes: Vec<Result<String, TransportError>>) -> Self {
        Self {
            outcomes: Mutex::new(outcomes.into()),
        }
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, _request: &CompletionRequest, _credential: Option<&str>) -> Result<String, TransportError> {
        let mut q = self.outcomes.lock().unwrap();
        match q.len() {
            0 => Err(TransportError::Protocol("script exhausted".into())),
            1 => q.front().cloned().unwrap(),
            _ => q.pop_front().unwrap(),
        }
    }

    fn needs_credential(&self) -> bool {
        false
    }
}
