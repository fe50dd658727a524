//! Single client boundary for every model call the harness makes.
//!
//! Four logical roles share one gateway: the system under test's backbone,
//! the user simulator, the satisfaction/equivalence judge, and the embedder.
//! Each role binds to a model id; the backend is either a real HTTP endpoint
//! (OpenAI-style chat/embeddings wire) or a scripted mock. Retries with
//! exponential backoff, per-role call counters, a parallelism cap, and an
//! optional request/response transcript all live here so callers stay
//! oblivious.

mod http;
mod mock;

pub use mock::{MockOutcome, MockReply, MockRule, MockScript};

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::estimate_tokens;

/// Who is asking: determines the model binding and the call counter bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayRole {
    /// The backbone LLM of the system under test.
    System,
    /// The user-feedback simulator.
    Simulator,
    /// Satisfaction scoring and answer-equivalence checks.
    Judge,
    /// Text embeddings for dense retrieval.
    Embedder,
}

impl GatewayRole {
    pub const ALL: [GatewayRole; 4] = [
        GatewayRole::System,
        GatewayRole::Simulator,
        GatewayRole::Judge,
        GatewayRole::Embedder,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }
}

/// One chat completion request. Decoding defaults are pinned low so runs
/// stay close to deterministic on the model side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.1,
            top_p: 0.1,
            top_k: 1,
            max_tokens: 2048,
        }
    }

    /// All message text concatenated; what mock matchers scan.
    pub fn flat_text(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

mod millis {
    use super::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Model ids per role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleBindings {
    pub system: String,
    pub simulator: String,
    pub judge: String,
    pub embedder: String,
}

impl RoleBindings {
    pub fn model_for(&self, role: GatewayRole) -> &str {
        match role {
            GatewayRole::System => &self.system,
            GatewayRole::Simulator => &self.simulator,
            GatewayRole::Judge => &self.judge,
            GatewayRole::Embedder => &self.embedder,
        }
    }
}

impl Default for RoleBindings {
    fn default() -> Self {
        Self {
            system: "system-model".into(),
            simulator: "simulator-model".into(),
            judge: "judge-model".into(),
            embedder: "embedder-model".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayProfile {
    /// Base URL, e.g. `https://host/v1`. Paths `/chat/completions` and
    /// `/embeddings` are appended.
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token. The token
    /// itself never appears in configs or logs.
    pub credentials_env: String,
    #[serde(default)]
    pub models: RoleBindings,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Upper bound on concurrent in-flight backend calls.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Whether the endpoint accepts a `top_k` sampling field.
    #[serde(default)]
    pub send_top_k: bool,
    /// Fallback token estimate when no tokenizer is available.
    #[serde(default = "default_chars_per_token")]
    pub chars_per_token: usize,
    /// When set, every request/response pair is appended here as JSONL.
    #[serde(default)]
    pub transcript_path: Option<PathBuf>,
}

fn default_parallelism() -> usize {
    1
}

fn default_chars_per_token() -> usize {
    4
}

impl Default for GatewayProfile {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            credentials_env: String::new(),
            models: RoleBindings::default(),
            retry: RetryPolicy::default(),
            parallelism: default_parallelism(),
            send_top_k: false,
            chars_per_token: default_chars_per_token(),
            transcript_path: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("mock script exhausted on {role:?} call")]
    ScriptExhausted { role: GatewayRole },
    #[error("mock script mismatch: expected request containing {expected:?}")]
    ScriptMismatch { expected: String },
    #[error("embedding rows inconsistent: expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("transcript write failed: {0}")]
    Transcript(String),
}

/// Errors a single attempt can produce; retryable ones feed the backoff loop.
#[derive(Debug)]
pub(crate) enum AttemptError {
    Retryable(String),
    Fatal(GatewayError),
}

pub(crate) enum Backend {
    Http(http::HttpBackend),
    Mock(Mutex<MockScript>),
}

/// Counting semaphore bounding in-flight backend calls.
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        GatePermit(self)
    }
}

struct GatePermit<'a>(&'a Gate);

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    profile: GatewayProfile,
    backend: Backend,
    counters: Mutex<HashMap<GatewayRole, u64>>,
    gate: Gate,
    backoffs: Mutex<Vec<Duration>>,
    transcript: Option<Mutex<std::io::BufWriter<std::fs::File>>>,
    /// Sleeps are skipped (but still recorded) when true; test-only knob.
    skip_sleep: bool,
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    role: GatewayRole,
    model: &'a str,
    request: &'a ChatRequest,
    response: &'a str,
}

impl Gateway {
    /// HTTP-backed gateway. Fails fast when the credential variable is
    /// missing or empty so a bad setup is caught before any run starts.
    pub fn http(profile: GatewayProfile) -> Result<Self, GatewayError> {
        let token = std::env::var(&profile.credentials_env).map_err(|_| {
            GatewayError::Auth(format!(
                "environment variable {} is not set",
                profile.credentials_env
            ))
        })?;
        if token.is_empty() {
            return Err(GatewayError::Auth(format!(
                "environment variable {} is empty",
                profile.credentials_env
            )));
        }
        let backend = Backend::Http(http::HttpBackend::new(&profile, token));
        Self::assemble(profile, backend, false)
    }

    /// Mock-backed gateway with default profile (parallelism 1, three
    /// attempts, 1ms backoff so scripted transient failures retry fast).
    pub fn mock(script: MockScript) -> Self {
        let profile = GatewayProfile {
            retry: RetryPolicy {
                max_attempts: 3,
                backoff_base: Duration::from_millis(1),
            },
            ..GatewayProfile::default()
        };
        Self::mock_with_profile(script, profile)
    }

    pub fn mock_with_profile(script: MockScript, profile: GatewayProfile) -> Self {
        Self::assemble(profile, Backend::Mock(Mutex::new(script)), true)
            .expect("mock gateway construction cannot fail")
    }

    fn assemble(
        profile: GatewayProfile,
        backend: Backend,
        skip_sleep: bool,
    ) -> Result<Self, GatewayError> {
        let transcript = match &profile.transcript_path {
            Some(path) => {
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| GatewayError::Transcript(e.to_string()))?;
                Some(Mutex::new(std::io::BufWriter::new(file)))
            }
            None => None,
        };
        Ok(Self {
            gate: Gate::new(profile.parallelism),
            counters: Mutex::new(HashMap::new()),
            backoffs: Mutex::new(Vec::new()),
            transcript,
            skip_sleep,
            profile,
            backend,
        })
    }

    pub fn profile(&self) -> &GatewayProfile {
        &self.profile
    }

    /// One chat completion for `role`, retried on transient failures with
    /// exponential backoff (base, 2x base, 4x base, ...).
    pub fn chat(&self, role: GatewayRole, request: &ChatRequest) -> Result<String, GatewayError> {
        self.bump(role);
        let model = self.profile.models.model_for(role).to_string();
        let response = self.with_retries(|| match &self.backend {
            Backend::Http(h) => h.chat(&model, request, self.profile.send_top_k),
            Backend::Mock(m) => m.lock().unwrap().chat(role, request),
        })?;
        self.record(role, &model, request, &response)?;
        Ok(response)
    }

    /// Embeds a batch of texts, preserving input order. All rows must share
    /// one dimension.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        self.bump(GatewayRole::Embedder);
        let model = self
            .profile
            .models
            .model_for(GatewayRole::Embedder)
            .to_string();
        let rows = self.with_retries(|| match &self.backend {
            Backend::Http(h) => h.embed(&model, texts),
            Backend::Mock(m) => Ok(m.lock().unwrap().embed(texts)),
        })?;
        let dim = rows.first().map_or(0, Vec::len);
        for row in &rows {
            if row.len() != dim {
                return Err(GatewayError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        Ok(rows)
    }

    /// Token estimate for prompt budgeting: the mock's exact counter when it
    /// has one, otherwise ceil(chars / chars_per_token).
    pub fn count_tokens(&self, text: &str) -> usize {
        if let Backend::Mock(m) = &self.backend {
            if let Some(n) = m.lock().unwrap().count_tokens(text) {
                return n;
            }
        }
        estimate_tokens(text, self.profile.chars_per_token)
    }

    /// Calls made on behalf of `role` (attempted requests count once even if
    /// retried internally).
    pub fn calls(&self, role: GatewayRole) -> u64 {
        *self.counters.lock().unwrap().get(&role).unwrap_or(&0)
    }

    /// Backoff delays scheduled so far, in request order.
    pub fn backoff_log(&self) -> Vec<Duration> {
        self.backoffs.lock().unwrap().clone()
    }

    fn bump(&self, role: GatewayRole) {
        *self.counters.lock().unwrap().entry(role).or_insert(0) += 1;
    }

    fn with_retries<T>(
        &self,
        mut attempt: impl FnMut() -> Result<T, AttemptError>,
    ) -> Result<T, GatewayError> {
        let _permit = self.gate.acquire();
        let max = self.profile.retry.max_attempts.max(1);
        let mut last = String::new();
        for n in 0..max {
            if n > 0 {
                let delay = self.profile.retry.backoff_base * 2u32.pow(n - 1);
                self.backoffs.lock().unwrap().push(delay);
                if !self.skip_sleep {
                    std::thread::sleep(delay);
                }
            }
            match attempt() {
                Ok(v) => return Ok(v),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(msg)) => last = msg,
            }
        }
        Err(GatewayError::Exhausted {
            attempts: max,
            last,
        })
    }

    fn record(
        &self,
        role: GatewayRole,
        model: &str,
        request: &ChatRequest,
        response: &str,
    ) -> Result<(), GatewayError> {
        let Some(t) = &self.transcript else {
            return Ok(());
        };
        let line = TranscriptLine {
            role,
            model,
            request,
            response,
        };
        let mut guard = t.lock().unwrap();
        let file = &mut *guard;
        serde_json::to_writer(&mut *file, &line)
            .map_err(|e| GatewayError::Transcript(e.to_string()))?;
        writeln!(file).map_err(|e| GatewayError::Transcript(e.to_string()))?;
        file.flush()
            .map_err(|e| GatewayError::Transcript(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::user(text)])
    }

    #[test]
    fn request_defaults_are_pinned() {
        let r = req("hi");
        assert_eq!(r.temperature, 0.1);
        assert_eq!(r.top_p, 0.1);
        assert_eq!(r.top_k, 1);
        assert_eq!(r.max_tokens, 2048);
    }

    #[test]
    fn mock_tape_replies_in_order_and_counts_calls() {
        let script = MockScript::new()
            .expect(MockRule::any("first").reply("one"))
            .expect(MockRule::role(GatewayRole::Judge, "second").reply("two"));
        let gw = Gateway::mock(script);
        assert_eq!(
            gw.chat(GatewayRole::System, &req("the first call"))
                .unwrap(),
            "one"
        );
        assert_eq!(
            gw.chat(GatewayRole::Judge, &req("a second call")).unwrap(),
            "two"
        );
        assert_eq!(gw.calls(GatewayRole::System), 1);
        assert_eq!(gw.calls(GatewayRole::Judge), 1);
        assert_eq!(gw.calls(GatewayRole::Simulator), 0);
    }

    #[test]
    fn mock_exhaustion_is_an_error_not_a_repeat() {
        let script = MockScript::new().expect(MockRule::any("").reply("only"));
        let gw = Gateway::mock(script);
        gw.chat(GatewayRole::System, &req("x")).unwrap();
        match gw.chat(GatewayRole::System, &req("x")) {
            Err(GatewayError::ScriptExhausted {
                role: GatewayRole::System,
            }) => {}
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn mock_default_reply_serves_after_tape() {
        let script = MockScript::new()
            .expect(MockRule::any("scripted").reply("tape"))
            .fallback(MockReply::fixed("default"));
        let gw = Gateway::mock(script);
        assert_eq!(
            gw.chat(GatewayRole::System, &req("scripted call")).unwrap(),
            "tape"
        );
        assert_eq!(
            gw.chat(GatewayRole::System, &req("anything")).unwrap(),
            "default"
        );
        assert_eq!(
            gw.chat(GatewayRole::Judge, &req("more")).unwrap(),
            "default"
        );
    }

    #[test]
    fn mock_role_defaults_route_by_caller() {
        let script = MockScript::new()
            .role_default(GatewayRole::Judge, MockReply::fixed("{\"score\": 7}"))
            .role_default(GatewayRole::System, MockReply::fixed("an answer"));
        let gw = Gateway::mock(script);
        assert_eq!(
            gw.chat(GatewayRole::Judge, &req("grade")).unwrap(),
            "{\"score\": 7}"
        );
        assert_eq!(
            gw.chat(GatewayRole::System, &req("answer")).unwrap(),
            "an answer"
        );
        assert!(gw.chat(GatewayRole::Simulator, &req("??")).is_err());
    }

    #[test]
    fn mock_mismatch_surfaces_expected_matcher() {
        let script = MockScript::new().expect(MockRule::any("needle").reply("r"));
        let gw = Gateway::mock(script);
        match gw.chat(GatewayRole::System, &req("haystack only")) {
            Err(GatewayError::ScriptMismatch { expected }) => assert_eq!(expected, "needle"),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn transient_failures_retry_with_exponential_backoff() {
        let script = MockScript::new()
            .expect(MockRule::any("").fail_transient())
            .expect(MockRule::any("").fail_transient())
            .expect(MockRule::any("").reply("finally"));
        let gw = Gateway::mock(script);
        assert_eq!(gw.chat(GatewayRole::System, &req("x")).unwrap(), "finally");
        let delays = gw.backoff_log();
        assert_eq!(
            delays,
            vec![Duration::from_millis(1), Duration::from_millis(2)]
        );
    }

    #[test]
    fn retries_exhaust_after_max_attempts() {
        let script = MockScript::new()
            .expect(MockRule::any("").fail_transient())
            .expect(MockRule::any("").fail_transient())
            .expect(MockRule::any("").fail_transient())
            .expect(MockRule::any("").reply("never reached"));
        let gw = Gateway::mock(script);
        match gw.chat(GatewayRole::System, &req("x")) {
            Err(GatewayError::Exhausted { attempts: 3, .. }) => {}
            other => panic!("expected exhaustion after 3 attempts, got {other:?}"),
        }
    }

    #[test]
    fn mock_embeddings_are_deterministic_and_distinct() {
        let gw = Gateway::mock(MockScript::new());
        let a = gw.embed(&["alpha".into(), "beta".into()]).unwrap();
        let b = gw.embed(&["alpha".into(), "beta".into()]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].len(), 8);
        assert_ne!(a[0], a[1]);
        // unit norm
        let norm: f32 = a[0].iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        assert_eq!(gw.calls(GatewayRole::Embedder), 2);
    }

    #[test]
    fn embedding_empty_batch_is_free() {
        let gw = Gateway::mock(MockScript::new());
        assert!(gw.embed(&[]).unwrap().is_empty());
        assert_eq!(gw.calls(GatewayRole::Embedder), 0);
    }

    #[test]
    fn token_counting_uses_estimate_or_exact_mock_counter() {
        let gw = Gateway::mock(MockScript::new());
        assert_eq!(gw.count_tokens(&"x".repeat(40)), 10);
        assert_eq!(gw.count_tokens(""), 0);
        let exact = MockScript::new().with_token_counter(|t| t.split_whitespace().count());
        let gw = Gateway::mock(exact);
        assert_eq!(gw.count_tokens("three word text"), 3);
    }

    #[test]
    fn missing_credentials_fail_at_construction() {
        let profile = GatewayProfile {
            endpoint: "http://localhost:1/v1".into(),
            credentials_env: "FEEDBENCH_TEST_ABSENT_TOKEN".into(),
            ..GatewayProfile::default()
        };
        match Gateway::http(profile) {
            Err(GatewayError::Auth(msg)) => assert!(msg.contains("FEEDBENCH_TEST_ABSENT_TOKEN")),
            other => panic!("expected auth failure, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn transcript_records_request_response_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcript.jsonl");
        let profile = GatewayProfile {
            transcript_path: Some(path.clone()),
            ..GatewayProfile::default()
        };
        let script = MockScript::new().fallback(MockReply::fixed("pong"));
        let gw = Gateway::mock_with_profile(script, profile);
        gw.chat(GatewayRole::System, &req("ping")).unwrap();
        gw.chat(GatewayRole::Judge, &req("ping2")).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["role"], "system");
        assert_eq!(first["response"], "pong");
        assert_eq!(first["request"]["messages"][0]["content"], "ping");
    }

    #[test]
    fn parallel_calls_respect_the_gate() {
        let script = MockScript::new().fallback(MockReply::fixed("ok"));
        let profile = GatewayProfile {
            parallelism: 2,
            ..GatewayProfile::default()
        };
        let gw = Gateway::mock_with_profile(script, profile);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| gw.chat(GatewayRole::System, &req("x")).unwrap());
            }
        });
        assert_eq!(gw.calls(GatewayRole::System), 8);
    }
}
