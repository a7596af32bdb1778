//! Completion gateway: one `complete` call over a pluggable backend, with
//! bounded concurrency, retries with exponential backoff, and an in-order
//! transcript that can be replayed as a mock script.

use std::fs;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    #[serde(default)]
    pub temperature: f64,
    pub max_output_tokens: usize,
    pub tag: String,
}

impl CompletionRequest {
    pub fn new(tag: impl Into<String>, system: impl Into<String>, user: impl Into<String>) -> Self {
        CompletionRequest {
            system_text: system.into(),
            user_text: user.into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            tag: tag.into(),
        }
    }

    pub fn with_max_output_tokens(mut self, n: usize) -> Self {
        self.max_output_tokens = n;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.user_text.trim().is_empty() {
            return Err(Error::Precondition(format!("request {:?} has empty user text", self.tag)));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(Error::Precondition(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub backend_id: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub attempt_count: u32,
    /// Set when the backend's answer exceeded `max_output_tokens` and was cut.
    #[serde(default)]
    pub truncated: bool,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Transport failures and 5xx-class responses. Retried.
    Transient(String),
    /// Authentication, configuration, malformed requests. Not retried.
    Fatal(String),
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            initial_backoff: Duration::ZERO,
        }
    }

    fn backoff(&self, failed_attempt: u32) -> Duration {
        self.initial_backoff
            .saturating_mul(1u32.checked_shl(failed_attempt - 1).unwrap_or(u32::MAX))
    }
}

/// Counting semaphore bounding in-flight backend calls.
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: CompletionRequest,
    pub result: CompletionResult,
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    policy: RetryPolicy,
    permits: Permits,
    transcript: Mutex<Vec<TranscriptEntry>>,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, policy: RetryPolicy, concurrency: usize) -> Self {
        Gateway {
            backend,
            policy,
            permits: Permits::new(concurrency),
            transcript: Mutex::new(Vec::new()),
        }
    }

    /// Mock-backed gateway with no backoff delay and the default bound of 4.
    pub fn mock(script: MockScript) -> Self {
        Gateway::new(Box::new(script), RetryPolicy::no_wait(3), 4)
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult> {
        request.validate()?;
        if self.policy.max_attempts == 0 {
            return Err(Error::GatewayConfig("retry limit must be at least 1".into()));
        }
        let _permit = self.permits.acquire();
        let started = Instant::now();
        let mut attempt = 0;
        let text = loop {
            attempt += 1;
            match self.backend.send(request) {
                Ok(text) => break text,
                Err(BackendError::Fatal(msg)) => return Err(Error::GatewayConfig(msg)),
                Err(BackendError::Transient(msg)) => {
                    tracing::warn!(tag = %request.tag, attempt, error = %msg, "transient backend failure");
                    if attempt >= self.policy.max_attempts {
                        return Err(Error::RetriesExhausted {
                            attempts: attempt,
                            last_error: msg,
                        });
                    }
                    thread::sleep(self.policy.backoff(attempt));
                }
            }
        };
        let (text, truncated) = truncate_tokens(text, request.max_output_tokens);
        if truncated {
            tracing::warn!(tag = %request.tag, max = request.max_output_tokens, "response truncated");
        }
        let result = CompletionResult {
            text,
            backend_id: self.backend.id(),
            latency: started.elapsed(),
            attempt_count: attempt,
            truncated,
        };
        tracing::debug!(
            tag = %request.tag,
            latency_ms = result.latency.as_millis() as u64,
            attempts = attempt,
            "completion"
        );
        self.transcript.lock().unwrap().push(TranscriptEntry {
            request: request.clone(),
            result: result.clone(),
        });
        Ok(result)
    }

    /// Every successful call so far, in completion order.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().unwrap().clone()
    }
}

/// Whitespace-token approximation of the output budget.
fn truncate_tokens(text: String, max_tokens: usize) -> (String, bool) {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            seen += 1;
            if seen > max_tokens {
                return (text[..i].trim_end().to_string(), true);
            }
        }
    }
    (text, false)
}

pub fn write_transcript(entries: &[TranscriptEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&serde_json::to_string(entry)?);
        out.push('\n');
    }
    fs::write(path.as_ref(), out)
        .map_err(|e| Error::io(format!("writing transcript {}", path.as_ref().display()), e))
}

pub fn read_transcript(path: impl AsRef<Path>) -> Result<Vec<TranscriptEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading transcript {}", path.display()), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Matches on the request tag (exact, or prefix/suffix with a single `*`)
/// and/or user text. All present conditions must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_text: Option<String>,
}

impl MockRule {
    pub fn tag(tag: impl Into<String>) -> Self {
        MockRule {
            tag: Some(tag.into()),
            ..Default::default()
        }
    }

    pub fn contains(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    fn matches(&self, request: &CompletionRequest) -> bool {
        if let Some(pattern) = &self.tag {
            if !tag_matches(pattern, &request.tag) {
                return false;
            }
        }
        if let Some(needle) = &self.contains {
            if !request.user_text.contains(needle.as_str()) {
                return false;
            }
        }
        if let Some(exact) = &self.user_text {
            if *exact != request.user_text {
                return false;
            }
        }
        true
    }
}

fn tag_matches(pattern: &str, tag: &str) -> bool {
    match pattern.split_once('*') {
        None => pattern == tag,
        Some((head, tail)) => {
            tag.len() >= head.len() + tail.len() && tag.starts_with(head) && tag.ends_with(tail)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    #[serde(flatten)]
    pub rule: MockRule,
    pub response: String,
}

/// First-match-wins canned responses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<ScriptedResponse>,
    #[serde(default)]
    pub default: String,
}

impl MockScript {
    pub fn new(default: impl Into<String>) -> Self {
        MockScript {
            rules: Vec::new(),
            default: default.into(),
        }
    }

    pub fn with_rule(mut self, rule: MockRule, response: impl Into<String>) -> Self {
        self.rules.push(ScriptedResponse {
            rule,
            response: response.into(),
        });
        self
    }

    pub fn respond(&self, request: &CompletionRequest) -> &str {
        self.rules
            .iter()
            .find(|r| r.rule.matches(request))
            .map(|r| r.response.as_str())
            .unwrap_or(&self.default)
    }

    /// Script that answers each recorded request (same tag and user text)
    /// with its recorded response.
    pub fn from_transcript(entries: &[TranscriptEntry]) -> Self {
        let mut script = MockScript::new("");
        for entry in entries {
            script.rules.push(ScriptedResponse {
                rule: MockRule {
                    tag: Some(entry.request.tag.clone()),
                    contains: None,
                    user_text: Some(entry.request.user_text.clone()),
                },
                response: entry.result.text.clone(),
            });
        }
        script
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading mock script {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

impl Backend for MockScript {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        Ok(self.respond(request).to_string())
    }
}

/// Chat-completion style HTTP backend: POST `{model, messages, temperature,
/// max_tokens}` and read `choices[0].message.content`.
pub struct ChatBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl ChatBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        ChatBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl Backend for ChatBackend {
    fn id(&self) -> String {
        format!("chat:{}", self.model)
    }

    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut messages = Vec::with_capacity(2);
        if !request.system_text.is_empty() {
            messages.push(ChatMessage {
                role: "system",
                content: &request.system_text,
            });
        }
        messages.push(ChatMessage {
            role: "user",
            content: &request.user_text,
        });
        let body = ChatRequestBody {
            model: &self.model,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(&body)
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            429 | 500..=599 => return Err(BackendError::Transient(format!("HTTP {status}: {text}"))),
            _ => return Err(BackendError::Fatal(format!("HTTP {status}: {text}"))),
        }
        let parsed: ChatResponseBody = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("malformed chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Fatal("chat response had no content".into()))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use super::*;

    pub(crate) struct Flaky {
        pub failures: u32,
        pub calls: AtomicU32,
    }

    impl Backend for Flaky {
        fn id(&self) -> String {
            "flaky".into()
        }

        fn send(&self, _: &CompletionRequest) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(BackendError::Transient("503".into()))
            } else {
                Ok("ok".into())
            }
        }
    }

    fn req(tag: &str) -> CompletionRequest {
        CompletionRequest::new(tag, "sys", "hello")
    }

    #[test]
    fn scripted_tag() {
        let gw = Gateway::mock(
            MockScript::new("default").with_rule(MockRule::tag("step1"), "- blockchain\n- ai"),
        );
        let r = gw.complete(&req("step1")).unwrap();
        assert_eq!(r.text, "- blockchain\n- ai");
        assert_eq!(r.attempt_count, 1);
        assert_eq!(gw.complete(&req("other")).unwrap().text, "default");
    }

    #[test]
    fn first_match_wins_and_wildcards() {
        let script = MockScript::new("d")
            .with_rule(MockRule::tag("*/identify").contains("Example 1:"), "few-shot")
            .with_rule(MockRule::tag("*/identify"), "plain")
            .with_rule(MockRule::tag("acme/*"), "acme");
        let mut r = req("acme/identify");
        assert_eq!(script.respond(&r), "plain");
        r.user_text = "Example 1: x".into();
        assert_eq!(script.respond(&r), "few-shot");
        assert_eq!(script.respond(&req("acme/extract")), "acme");
        assert_eq!(script.respond(&req("zeta/extract")), "d");
    }

    #[test]
    fn retries_until_success() {
        let gw = Gateway::new(
            Box::new(Flaky { failures: 2, calls: AtomicU32::new(0) }),
            RetryPolicy::no_wait(3),
            1,
        );
        let r = gw.complete(&req("x")).unwrap();
        assert_eq!(r.attempt_count, 3);
    }

    #[test]
    fn exhausted_retries() {
        let gw = Gateway::new(
            Box::new(Flaky { failures: u32::MAX, calls: AtomicU32::new(0) }),
            RetryPolicy::no_wait(2),
            1,
        );
        assert!(matches!(
            gw.complete(&req("x")),
            Err(Error::RetriesExhausted { attempts: 2, .. })
        ));
        assert!(gw.transcript().is_empty());
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_secs(1));
        assert_eq!(p.backoff(2), Duration::from_secs(2));
        assert_eq!(p.backoff(3), Duration::from_secs(4));
    }

    #[test]
    fn truncation_flag() {
        let gw = Gateway::mock(MockScript::new("one two three four"));
        let r = gw.complete(&req("x").with_max_output_tokens(2)).unwrap();
        assert_eq!(r.text, "one two");
        assert!(r.truncated);
        let r = gw.complete(&req("x").with_max_output_tokens(4)).unwrap();
        assert!(!r.truncated);
    }

    #[test]
    fn empty_user_text_rejected() {
        let gw = Gateway::mock(MockScript::new("x"));
        let mut r = req("x");
        r.user_text = "  ".into();
        assert!(gw.complete(&r).is_err());
    }

    #[test]
    fn transcript_records_in_order_and_replays() {
        let gw = Gateway::mock(MockScript::new("d").with_rule(MockRule::tag("b"), "B"));
        assert!(gw.transcript().is_empty());
        for tag in ["a", "b", "c"] {
            gw.complete(&req(tag)).unwrap();
        }
        let t = gw.transcript();
        let tags: Vec<_> = t.iter().map(|e| e.request.tag.as_str()).collect();
        assert_eq!(tags, ["a", "b", "c"]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_transcript(&t, &path).unwrap();
        let back = read_transcript(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(&t) {
            assert_eq!(a.request, b.request);
            assert_eq!(a.result.text, b.result.text);
        }
        let replay = MockScript::from_transcript(&back);
        assert_eq!(replay.respond(&req("b")), "B");
        assert_eq!(replay.respond(&req("a")), "d");
    }

    #[test]
    fn semaphore_bounds_in_flight() {
        use std::sync::Arc;

        struct Slow {
            live: AtomicU32,
            peak: AtomicU32,
        }
        impl Backend for Arc<Slow> {
            fn id(&self) -> String {
                "slow".into()
            }
            fn send(&self, _: &CompletionRequest) -> Result<String, BackendError> {
                let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                thread::sleep(Duration::from_millis(10));
                self.live.fetch_sub(1, Ordering::SeqCst);
                Ok("x".into())
            }
        }
        let slow = Arc::new(Slow { live: AtomicU32::new(0), peak: AtomicU32::new(0) });
        let gw = Gateway::new(Box::new(slow.clone()), RetryPolicy::no_wait(1), 2);
        thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| gw.complete(&req("x")).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gw.transcript().len(), 8);
    }
}
