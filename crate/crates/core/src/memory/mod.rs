//! Memory systems under test. A system ingests the static corpus and the
//! accumulating feedback sessions, retrieves relevant entries for a query,
//! and answers through the gateway's system model. The no-memory baseline
//! ignores ingestion entirely.

mod bm25;
mod embed;
mod persist;

pub use bm25::Bm25Index;
pub use embed::{cosine_similarity, VectorIndex};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, MessageRole};
use crate::simulator::{DialogTurn, FeedbackSession, Speaker, TerminationReason};
use crate::tasks::TaskCase;
use crate::text::tokenize_for_index;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("query alone needs {needed} tokens but the context budget is {budget}")]
    BudgetUnsatisfiable { needed: usize, budget: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("memory schema violation: {0}")]
    SchemaViolation(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Where an entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySource {
    Corpus,
    Feedback,
}

/// One stored memory. `text` is what gets injected into prompts; `index_key`
/// is what retrieval matches against (they differ at session granularity,
/// where a whole dialog is filed under its opening query).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub entry_id: String,
    pub text: String,
    pub index_key: String,
    pub source: MemorySource,
    pub case_id: String,
    pub position: usize,
}

/// How finely ingested material is chopped into entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One entry per message (feedback) or per line (corpus).
    Message,
    /// One entry per session or corpus passage.
    Session,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub top_k: usize,
    /// Token budget for the assembled first prompt (memories plus query).
    pub context_token_budget: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            context_token_budget: 8192,
        }
    }
}

/// A system under test. Ingestion is sequential (`&mut`); retrieval and
/// response are read-only so test queries can run in parallel.
pub trait MemorySystem: Send + Sync {
    /// Short kind name, e.g. `bm25-m` or `vanilla`.
    fn name(&self) -> &str;

    /// Stores static passages belonging to `case_id`. Returns entries added.
    fn ingest_corpus(&mut self, case_id: &str, passages: &[String]) -> Result<usize, MemoryError>;

    /// Stores completed feedback sessions. Error-terminated sessions are
    /// logged upstream but never stored. Returns entries added.
    fn ingest_sessions(&mut self, sessions: &[FeedbackSession]) -> Result<usize, MemoryError>;

    fn entry_count(&self) -> usize;

    /// Top-ranked entries for a query, best first.
    fn retrieve(&self, query: &str) -> Result<Vec<MemoryEntry>, MemoryError>;

    /// Answers the dialog through the gateway, grounding the first user turn
    /// in as many retrieved memories as the token budget allows.
    fn respond(
        &self,
        case: &TaskCase,
        memories: &[MemoryEntry],
        turns: &[DialogTurn],
    ) -> Result<String, MemoryError>;
}

/// Builds a system from its kind name: `vanilla`, or `{bm25,embed}-{s,m}`
/// (session or message granularity).
pub fn build_system(
    kind: &str,
    gateway: Arc<Gateway>,
    config: RetrievalConfig,
) -> Result<Box<dyn MemorySystem>, MemoryError> {
    let system: Box<dyn MemorySystem> = match kind {
        "vanilla" => Box::new(VanillaSystem::new(gateway, config)),
        "bm25-s" => Box::new(RagSystem::bm25(gateway, Granularity::Session, config)),
        "bm25-m" => Box::new(RagSystem::bm25(gateway, Granularity::Message, config)),
        "embed-s" => Box::new(RagSystem::embedding(gateway, Granularity::Session, config)),
        "embed-m" => Box::new(RagSystem::embedding(gateway, Granularity::Message, config)),
        other => {
            return Err(MemoryError::SchemaViolation(format!(
                "unknown memory system kind {other:?}"
            )))
        }
    };
    Ok(system)
}

pub const SYSTEM_KINDS: [&str; 5] = ["vanilla", "bm25-s", "bm25-m", "embed-s", "embed-m"];

/// First-prompt template injecting retrieved memories ahead of the query.
/// With no memories the query is sent bare.
pub fn assemble_prompt(memories: &[&str], query: &str) -> String {
    if memories.is_empty() {
        return query.to_string();
    }
    format!(
        "User Memories:\n{memories}\n\nUser input:\n{query}\n\nBased on the memories provided, \
         respond naturally and appropriately to the user's input above.",
        memories = memories.join("\n\n"),
    )
}

/// Longest memory prefix whose assembled prompt fits the budget. Falls back
/// to the bare query; errors only if even that exceeds the budget.
fn fit_prompt(
    gateway: &Gateway,
    memories: &[&str],
    query: &str,
    budget: usize,
) -> Result<String, MemoryError> {
    for keep in (0..=memories.len()).rev() {
        let prompt = assemble_prompt(&memories[..keep], query);
        if gateway.count_tokens(&prompt) <= budget {
            return Ok(prompt);
        }
    }
    Err(MemoryError::BudgetUnsatisfiable {
        needed: gateway.count_tokens(query),
        budget,
    })
}

fn dialog_messages(first_prompt: String, turns: &[DialogTurn]) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::user(first_prompt)];
    for turn in &turns[1..] {
        messages.push(match turn.role {
            Speaker::User => ChatMessage::user(turn.content.clone()),
            Speaker::Assistant => ChatMessage::assistant(turn.content.clone()),
        });
    }
    debug_assert_eq!(messages.last().map(|m| m.role), Some(MessageRole::User));
    messages
}

fn chat_grounded(
    gateway: &Gateway,
    config: &RetrievalConfig,
    memory_texts: &[&str],
    turns: &[DialogTurn],
) -> Result<String, MemoryError> {
    let query = turns
        .first()
        .map(|t| t.content.as_str())
        .unwrap_or_default();
    let prompt = fit_prompt(gateway, memory_texts, query, config.context_token_budget)?;
    let reply = gateway.chat(
        crate::gateway::GatewayRole::System,
        &ChatRequest::new(dialog_messages(prompt, turns)),
    )?;
    Ok(reply)
}

enum IndexBackend {
    Lexical(Bm25Index),
    Semantic(VectorIndex),
}

/// Retrieval-augmented system: a BM25 or embedding index over memory entries.
pub struct RagSystem {
    name: String,
    gateway: Arc<Gateway>,
    granularity: Granularity,
    backend: IndexBackend,
    entries: Vec<MemoryEntry>,
    config: RetrievalConfig,
}

impl RagSystem {
    pub fn bm25(gateway: Arc<Gateway>, granularity: Granularity, config: RetrievalConfig) -> Self {
        Self {
            name: match granularity {
                Granularity::Session => "bm25-s".into(),
                Granularity::Message => "bm25-m".into(),
            },
            gateway,
            granularity,
            backend: IndexBackend::Lexical(Bm25Index::new()),
            entries: Vec::new(),
            config,
        }
    }

    pub fn embedding(
        gateway: Arc<Gateway>,
        granularity: Granularity,
        config: RetrievalConfig,
    ) -> Self {
        Self {
            name: match granularity {
                Granularity::Session => "embed-s".into(),
                Granularity::Message => "embed-m".into(),
            },
            gateway,
            granularity,
            backend: IndexBackend::Semantic(VectorIndex::new()),
            entries: Vec::new(),
            config,
        }
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    /// Splits a corpus passage according to granularity.
    fn corpus_units(&self, passage: &str) -> Vec<String> {
        match self.granularity {
            Granularity::Session => vec![passage.to_string()],
            Granularity::Message => passage
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        }
    }

    fn add_entries(&mut self, drafts: Vec<MemoryEntry>) -> Result<usize, MemoryError> {
        if drafts.is_empty() {
            return Ok(0);
        }
        let added = drafts.len();
        let keys: Vec<String> = drafts.iter().map(|d| d.index_key.clone()).collect();
        match &mut self.backend {
            IndexBackend::Lexical(index) => {
                for key in &keys {
                    index.add(&tokenize_for_index(key));
                }
            }
            IndexBackend::Semantic(index) => {
                let vectors = self.gateway.embed(&keys)?;
                index.add_batch(vectors)?;
            }
        }
        self.entries.extend(drafts);
        Ok(added)
    }

    fn draft(
        &self,
        next_id: usize,
        text: String,
        index_key: String,
        source: MemorySource,
        case_id: &str,
        position: usize,
    ) -> MemoryEntry {
        MemoryEntry {
            entry_id: format!("m{next_id:06}"),
            text,
            index_key,
            source,
            case_id: case_id.to_string(),
            position,
        }
    }
}

impl MemorySystem for RagSystem {
    fn name(&self) -> &str {
        &self.name
    }

    fn ingest_corpus(&mut self, case_id: &str, passages: &[String]) -> Result<usize, MemoryError> {
        let mut drafts = Vec::new();
        let mut position = 0;
        for passage in passages {
            for unit in self.corpus_units(passage) {
                let id = self.entries.len() + drafts.len();
                drafts.push(self.draft(
                    id,
                    unit.clone(),
                    unit,
                    MemorySource::Corpus,
                    case_id,
                    position,
                ));
                position += 1;
            }
        }
        self.add_entries(drafts)
    }

    fn ingest_sessions(&mut self, sessions: &[FeedbackSession]) -> Result<usize, MemoryError> {
        let mut drafts = Vec::new();
        for session in sessions {
            if session.terminated_by == TerminationReason::Error {
                continue;
            }
            match self.granularity {
                Granularity::Message => {
                    for (position, turn) in session.turns.iter().enumerate() {
                        let id = self.entries.len() + drafts.len();
                        drafts.push(self.draft(
                            id,
                            turn.content.clone(),
                            turn.content.clone(),
                            MemorySource::Feedback,
                            &session.case_id,
                            position,
                        ));
                    }
                }
                Granularity::Session => {
                    let id = self.entries.len() + drafts.len();
                    let key = session.turns[0].content.clone();
                    drafts.push(self.draft(
                        id,
                        session.rendered_dialog(),
                        key,
                        MemorySource::Feedback,
                        &session.case_id,
                        0,
                    ));
                }
            }
        }
        self.add_entries(drafts)
    }

    fn entry_count(&self) -> usize {
        self.entries.len()
    }

    fn retrieve(&self, query: &str) -> Result<Vec<MemoryEntry>, MemoryError> {
        let ranked: Vec<(usize, f64)> = match &self.backend {
            IndexBackend::Lexical(index) => {
                index.top_k(&tokenize_for_index(query), self.config.top_k)
            }
            IndexBackend::Semantic(index) => {
                let query_vec = self
                    .gateway
                    .embed(&[query.to_string()])?
                    .into_iter()
                    .next()
                    .ok_or_else(|| MemoryError::SchemaViolation("empty embedding batch".into()))?;
                index.top_k(&query_vec, self.config.top_k)
            }
        };
        Ok(ranked
            .into_iter()
            .map(|(i, _)| self.entries[i].clone())
            .collect())
    }

    fn respond(
        &self,
        _case: &TaskCase,
        memories: &[MemoryEntry],
        turns: &[DialogTurn],
    ) -> Result<String, MemoryError> {
        let texts: Vec<&str> = memories.iter().map(|m| m.text.as_str()).collect();
        chat_grounded(&self.gateway, &self.config, &texts, turns)
    }
}

/// No-memory baseline: ignores all ingestion and answers from the case's own
/// static context, clipped to the same token budget.
pub struct VanillaSystem {
    gateway: Arc<Gateway>,
    config: RetrievalConfig,
}

impl VanillaSystem {
    pub fn new(gateway: Arc<Gateway>, config: RetrievalConfig) -> Self {
        Self { gateway, config }
    }
}

impl MemorySystem for VanillaSystem {
    fn name(&self) -> &str {
        "vanilla"
    }

    fn ingest_corpus(
        &mut self,
        _case_id: &str,
        _passages: &[String],
    ) -> Result<usize, MemoryError> {
        Ok(0)
    }

    fn ingest_sessions(&mut self, _sessions: &[FeedbackSession]) -> Result<usize, MemoryError> {
        Ok(0)
    }

    fn entry_count(&self) -> usize {
        0
    }

    fn retrieve(&self, _query: &str) -> Result<Vec<MemoryEntry>, MemoryError> {
        Ok(Vec::new())
    }

    fn respond(
        &self,
        case: &TaskCase,
        _memories: &[MemoryEntry],
        turns: &[DialogTurn],
    ) -> Result<String, MemoryError> {
        let texts: Vec<&str> = case.context.iter().map(String::as_str).collect();
        chat_grounded(&self.gateway, &self.config, &texts, turns)
    }
}

/// Persists a RAG system's memory to `dir` (entries, index, and a schema-
/// tagged manifest).
pub fn save_memory(system: &RagSystem, dir: &Path) -> Result<(), MemoryError> {
    persist::save(system, dir)
}

/// Restores a previously saved memory. The gateway is needed for future
/// embedding and chat calls, not for loading.
pub fn load_memory(dir: &Path, gateway: Arc<Gateway>) -> Result<RagSystem, MemoryError> {
    persist::load(dir, gateway)
}

pub use persist::SCHEMA_TAG;

/// Groups each case's passages, deduplicating identical passages by content
/// so shared corpora are stored once. Insertion order is preserved per case;
/// cases are visited in the given order.
pub fn dedupe_corpus<'c>(
    cases: impl IntoIterator<Item = &'c TaskCase>,
) -> Vec<(String, Vec<String>)> {
    let mut seen = std::collections::HashSet::new();
    let mut grouped: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut order = Vec::new();
    for case in cases {
        for passage in &case.context {
            let digest = crate::tasks::hex_digest(passage.as_bytes());
            if seen.insert(digest) {
                if !grouped.contains_key(&case.case_id) {
                    order.push(case.case_id.clone());
                }
                grouped
                    .entry(case.case_id.clone())
                    .or_default()
                    .push(passage.clone());
            }
        }
    }
    order
        .into_iter()
        .map(|id| {
            let passages = grouped.remove(&id).unwrap_or_default();
            (id, passages)
        })
        .collect()
}
