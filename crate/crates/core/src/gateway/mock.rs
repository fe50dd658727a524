//! Scripted offline backend. A tape of ordered expectations is consumed
//! first (each may reply, or fail transiently to exercise retry); after the
//! tape, per-role defaults and a global fallback serve unlimited calls.
//! Running past the script without a fallback is an error so tests notice
//! unplanned traffic instead of looping on a stale canned reply.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{AttemptError, ChatRequest, GatewayError, GatewayRole};

type ReplyFn = Arc<dyn Fn(&ChatRequest) -> String + Send + Sync>;
type TokenFn = Arc<dyn Fn(&str) -> usize + Send + Sync>;

/// How a matched call is answered.
#[derive(Clone)]
pub enum MockReply {
    Fixed(String),
    /// Computed from the request; lets tests echo query-dependent answers.
    Derived(ReplyFn),
}

impl MockReply {
    pub fn fixed(s: impl Into<String>) -> Self {
        MockReply::Fixed(s.into())
    }

    pub fn derived(f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> Self {
        MockReply::Derived(Arc::new(f))
    }

    fn render(&self, req: &ChatRequest) -> String {
        match self {
            MockReply::Fixed(s) => s.clone(),
            MockReply::Derived(f) => f(req),
        }
    }
}

impl std::fmt::Debug for MockReply {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MockReply::Fixed(s) => f.debug_tuple("Fixed").field(s).finish(),
            MockReply::Derived(_) => f.write_str("Derived(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MockOutcome {
    Reply(MockReply),
    /// Simulates a transient transport failure (timeout, 5xx).
    TransientFailure,
}

/// One tape entry: the call must come from `role` (when set) and its text
/// must contain `contains` (empty matches anything).
#[derive(Debug, Clone)]
pub struct MockRule {
    pub role: Option<GatewayRole>,
    pub contains: String,
    outcome: MockOutcome,
}

impl MockRule {
    pub fn any(contains: impl Into<String>) -> MockRuleBuilder {
        MockRuleBuilder {
            role: None,
            contains: contains.into(),
        }
    }

    pub fn role(role: GatewayRole, contains: impl Into<String>) -> MockRuleBuilder {
        MockRuleBuilder {
            role: Some(role),
            contains: contains.into(),
        }
    }
}

pub struct MockRuleBuilder {
    role: Option<GatewayRole>,
    contains: String,
}

impl MockRuleBuilder {
    pub fn reply(self, text: impl Into<String>) -> MockRule {
        MockRule {
            role: self.role,
            contains: self.contains,
            outcome: MockOutcome::Reply(MockReply::fixed(text)),
        }
    }

    pub fn reply_with(
        self,
        f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static,
    ) -> MockRule {
        MockRule {
            role: self.role,
            contains: self.contains,
            outcome: MockOutcome::Reply(MockReply::derived(f)),
        }
    }

    pub fn fail_transient(self) -> MockRule {
        MockRule {
            role: self.role,
            contains: self.contains,
            outcome: MockOutcome::TransientFailure,
        }
    }
}

pub struct MockScript {
    tape: VecDeque<MockRule>,
    role_defaults: HashMap<GatewayRole, MockReply>,
    fallback: Option<MockReply>,
    embed_dim: usize,
    token_counter: Option<TokenFn>,
}

impl Default for MockScript {
    fn default() -> Self {
        Self::new()
    }
}

impl MockScript {
    pub fn new() -> Self {
        Self {
            tape: VecDeque::new(),
            role_defaults: HashMap::new(),
            fallback: None,
            embed_dim: 8,
            token_counter: None,
        }
    }

    pub fn expect(mut self, rule: MockRule) -> Self {
        self.tape.push_back(rule);
        self
    }

    pub fn role_default(mut self, role: GatewayRole, reply: MockReply) -> Self {
        self.role_defaults.insert(role, reply);
        self
    }

    pub fn fallback(mut self, reply: MockReply) -> Self {
        self.fallback = Some(reply);
        self
    }

    pub fn embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim.max(1);
        self
    }

    /// Exact tokenizer for budget tests; absent means the gateway estimates.
    pub fn with_token_counter(mut self, f: impl Fn(&str) -> usize + Send + Sync + 'static) -> Self {
        self.token_counter = Some(Arc::new(f));
        self
    }

    pub(crate) fn chat(
        &mut self,
        role: GatewayRole,
        request: &ChatRequest,
    ) -> Result<String, AttemptError> {
        if let Some(rule) = self.tape.pop_front() {
            if let Some(expected_role) = rule.role {
                if expected_role != role {
                    return Err(AttemptError::Fatal(GatewayError::ScriptMismatch {
                        expected: format!("role {expected_role:?}"),
                    }));
                }
            }
            if !rule.contains.is_empty() && !request.flat_text().contains(&rule.contains) {
                return Err(AttemptError::Fatal(GatewayError::ScriptMismatch {
                    expected: rule.contains,
                }));
            }
            return match rule.outcome {
                MockOutcome::Reply(r) => Ok(r.render(request)),
                MockOutcome::TransientFailure => {
                    Err(AttemptError::Retryable("scripted transient failure".into()))
                }
            };
        }
        if let Some(reply) = self.role_defaults.get(&role) {
            return Ok(reply.render(request));
        }
        if let Some(reply) = &self.fallback {
            return Ok(reply.render(request));
        }
        Err(AttemptError::Fatal(GatewayError::ScriptExhausted { role }))
    }

    /// Deterministic pseudo-embeddings: the text's SHA-256 expanded into
    /// `embed_dim` floats and normalized to unit length. Stable across runs,
    /// distinct texts map to distinct directions.
    pub(crate) fn embed(&self, texts: &[String]) -> Vec<Vec<f32>> {
        texts
            .iter()
            .map(|t| hash_vector(t, self.embed_dim))
            .collect()
    }

    pub(crate) fn count_tokens(&self, text: &str) -> Option<usize> {
        self.token_counter.as_ref().map(|f| f(text))
    }
}

fn hash_vector(text: &str, dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(dim);
    let mut counter = 0u32;
    while out.len() < dim {
        let mut hasher = Sha256::new();
        hasher.update(counter.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        for chunk in digest.chunks_exact(4) {
            if out.len() == dim {
                break;
            }
            let bits = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            // map to [-1, 1)
            out.push((f64::from(bits) / f64::from(u32::MAX) * 2.0 - 1.0) as f32);
        }
        counter += 1;
    }
    let norm: f32 = out.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        for x in &mut out {
            *x /= norm;
        }
    }
    out
}
