//! The simulated user: turns a training case plus a system's responses into
//! a multi-turn feedback session with per-turn satisfaction scores and
//! sampled like/dislike/copy actions.
//!
//! Two simulation paths exist. Datasets with verifiable answers take the
//! metric path: satisfaction comes straight from token F1 or answer
//! correctness, and follow-up user turns come from fixed templates. Everything
//! else takes the LLM path: a persona-conditioned simulator model decides
//! whether to continue and what to say, and a judge model grades satisfaction.
//! Metric-path sessions never touch the simulator or judge models.

mod prompts;
mod session;

pub use prompts::{
    build_profile_prompt, build_test_prompt, render_evaluation_context, render_history,
    satisfaction_prompts, REINSTRUCTION,
};
pub use session::{parse_verdict, score_satisfaction, SessionConfig, SessionSimulator};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{SatisfactionScore, UserAction};
use crate::gateway::GatewayError;
use crate::memory::MemoryError;
use crate::tasks::{CaseSet, TaskCase};
use crate::types::MetricKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

/// One utterance. Ordinals are assigned by position and only exist in
/// memory; the interchange format stores turn order implicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogTurn {
    pub role: Speaker,
    pub content: String,
    #[serde(skip)]
    pub ordinal: u64,
}

impl DialogTurn {
    pub fn user(content: impl Into<String>, ordinal: u64) -> Self {
        Self {
            role: Speaker::User,
            content: content.into(),
            ordinal,
        }
    }

    pub fn assistant(content: impl Into<String>, ordinal: u64) -> Self {
        Self {
            role: Speaker::Assistant,
            content: content.into(),
            ordinal,
        }
    }
}

/// Why a session stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// The simulated user chose to end (or was satisfied on the metric path).
    SimulatorEnd,
    /// The assistant-turn cap was reached.
    TurnLimit,
    /// Simulation machinery failed mid-session; the session is kept for the
    /// log but must not be ingested into memory.
    Error,
}

/// A completed training interaction: the dialog, one satisfaction score and
/// one sampled action per assistant turn, and how it ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SessionRecord", into = "SessionRecord")]
pub struct FeedbackSession {
    pub case_id: String,
    pub dataset: String,
    pub turns: Vec<DialogTurn>,
    pub satisfaction: Vec<SatisfactionScore>,
    pub actions: Vec<UserAction>,
    pub terminated_by: TerminationReason,
}

impl FeedbackSession {
    pub fn assistant_turns(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.role == Speaker::Assistant)
            .count()
    }

    /// Structural invariants every stored session must satisfy.
    pub fn validate(&self) -> Result<(), String> {
        if self.turns.is_empty() {
            return Err("session has no turns".into());
        }
        if self.turns[0].role != Speaker::User {
            return Err("first turn must be the user's query".into());
        }
        for (i, pair) in self.turns.windows(2).enumerate() {
            if pair[0].role == pair[1].role {
                return Err(format!("turns {i} and {} have the same speaker", i + 1));
            }
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.content.trim().is_empty() {
                return Err(format!("turn {i} has empty content"));
            }
        }
        let assistant = self.assistant_turns();
        if assistant == 0 {
            return Err("session has no assistant turns".into());
        }
        if self.satisfaction.len() != assistant || self.actions.len() != assistant {
            return Err(format!(
                "{} assistant turns but {} scores and {} actions",
                assistant,
                self.satisfaction.len(),
                self.actions.len()
            ));
        }
        Ok(())
    }

    /// The dialog rendered as one entry-able text block.
    pub fn rendered_dialog(&self) -> String {
        prompts::render_history(&self.turns)
    }
}

/// On-disk shape of a session (JSONL, one per line).
#[derive(Serialize, Deserialize)]
struct SessionRecord {
    case_id: String,
    dataset: String,
    turns: Vec<TurnRecord>,
    satisfaction: Vec<SatisfactionScore>,
    actions: Vec<UserAction>,
    terminated_by: TerminationReason,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    role: Speaker,
    content: String,
}

impl From<FeedbackSession> for SessionRecord {
    fn from(s: FeedbackSession) -> Self {
        Self {
            case_id: s.case_id,
            dataset: s.dataset,
            turns: s
                .turns
                .into_iter()
                .map(|t| TurnRecord {
                    role: t.role,
                    content: t.content,
                })
                .collect(),
            satisfaction: s.satisfaction,
            actions: s.actions,
            terminated_by: s.terminated_by,
        }
    }
}

impl TryFrom<SessionRecord> for FeedbackSession {
    type Error = String;
    fn try_from(r: SessionRecord) -> Result<Self, String> {
        let turns = r
            .turns
            .into_iter()
            .enumerate()
            .map(|(i, t)| DialogTurn {
                role: t.role,
                content: t.content,
                ordinal: i as u64,
            })
            .collect();
        Ok(Self {
            case_id: r.case_id,
            dataset: r.dataset,
            turns,
            satisfaction: r.satisfaction,
            actions: r.actions,
            terminated_by: r.terminated_by,
        })
    }
}

/// How a dataset's sessions are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationPath {
    /// Satisfaction computed directly from a verifiable metric; no simulator
    /// or judge calls. Only `F1` and `Accuracy` qualify.
    MetricDirect(MetricKind),
    /// Persona-driven simulator model plus judge-scored satisfaction.
    LlmSimulated,
}

/// Dataset tag to simulation path. Routes are fixed per dataset; an
/// unregistered tag is an error rather than a silent default.
#[derive(Debug, Clone, Default)]
pub struct SimulationRouter {
    routes: HashMap<String, SimulationPath>,
}

impl SimulationRouter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, dataset: impl Into<String>, path: SimulationPath) {
        self.routes.insert(dataset.into(), path);
    }

    /// Derives routes from each dataset's declared metric: verifiable
    /// metrics take the metric path, the rest the LLM path. Mixed-metric
    /// datasets route by their first case.
    pub fn from_cases(cases: &CaseSet) -> Self {
        let mut router = Self::new();
        for case in cases.cases() {
            router
                .routes
                .entry(case.dataset.clone())
                .or_insert_with(|| {
                    if case.eval.metric.verifiable() {
                        SimulationPath::MetricDirect(case.eval.metric)
                    } else {
                        SimulationPath::LlmSimulated
                    }
                });
        }
        router
    }

    pub fn route(&self, case: &TaskCase) -> Result<SimulationPath, SimulatorError> {
        self.routes
            .get(&case.dataset)
            .copied()
            .ok_or_else(|| SimulatorError::UnknownDataset(case.dataset.clone()))
    }
}

/// Who the simulator pretends to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPersona {
    pub persona: String,
    pub domain_expertise: String,
    #[serde(default)]
    pub evaluation_criteria: Vec<String>,
    #[serde(default)]
    pub additional_context: Option<String>,
}

/// Persona plus the one-line task description used in the turn prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorProfile {
    pub persona: UserPersona,
    pub task_description: String,
}

impl SimulatorProfile {
    /// Neutral profile for datasets without a dedicated persona.
    pub fn generic() -> Self {
        Self {
            persona: UserPersona {
                persona: "You are simulating a user who asked an AI assistant for help \
                          with a task and now reviews each response."
                    .into(),
                domain_expertise: "You are attentive and have enough background to judge \
                                   whether a response actually addresses the request."
                    .into(),
                evaluation_criteria: vec![
                    "Directly addresses the original request".into(),
                    "Accurate and complete".into(),
                    "Clear and appropriately detailed".into(),
                ],
                additional_context: None,
            },
            task_description: "asking an AI assistant for help with a task".into(),
        }
    }

    /// Science-journalism persona used by the long-form news-writing preset.
    pub fn science_news() -> Self {
        Self {
            persona: UserPersona {
                persona: "You are simulating a science journalist or editor who requested \
                          AI assistance to write journalistic reports of scientific papers \
                          for general audiences."
                    .into(),
                domain_expertise: "You have expertise in science journalism across diverse \
                                   fields including computer science, cybersecurity, privacy \
                                   research, mobile computing, cloud services, encryption \
                                   technologies, biomedical research, environmental science, \
                                   and other technical domains. You understand what makes \
                                   scientific writing accessible to the general public while \
                                   maintaining accuracy."
                    .into(),
                evaluation_criteria: vec![
                    "Accessible and readable for general audiences without technical background".into(),
                    "Accurate to the original scientific work without oversimplification".into(),
                    "Engaging and newsworthy in its presentation style".into(),
                    "Well-structured with appropriate journalistic elements (headlines, lead paragraphs, context)".into(),
                    "Properly balancing technical detail with readability".into(),
                ],
                additional_context: Some(
                    "Your evaluation focuses on the journalistic transformation of academic \
                     content rather than the underlying research quality. Consider: readability \
                     for lay audiences, accuracy to source material, journalistic style and \
                     structure, engagement factor, and clarity of technical concepts."
                        .into(),
                ),
            },
            task_description: "seeking to transform scientific papers into accessible \
                               journalistic reports for general audiences"
                .into(),
        }
    }
}

/// Per-dataset profiles with a generic fallback.
#[derive(Debug, Clone)]
pub struct ProfileRegistry {
    by_dataset: HashMap<String, SimulatorProfile>,
    fallback: SimulatorProfile,
}

impl Default for ProfileRegistry {
    fn default() -> Self {
        Self {
            by_dataset: HashMap::new(),
            fallback: SimulatorProfile::generic(),
        }
    }
}

impl ProfileRegistry {
    pub fn register(&mut self, dataset: impl Into<String>, profile: SimulatorProfile) {
        self.by_dataset.insert(dataset.into(), profile);
    }

    pub fn profile_for(&self, dataset: &str) -> &SimulatorProfile {
        self.by_dataset.get(dataset).unwrap_or(&self.fallback)
    }
}

/// The simulator model's structured reply on the LLM path. Construction is
/// gated through [`parse_verdict`], which guarantees: continuing verdicts
/// carry a non-empty response, ending verdicts carry none.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct SimulatorVerdict {
    pub reasoning: String,
    pub behavior: Behavior,
    pub response: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    ContinueConversation,
    EndConversation,
}

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("dataset {0} has no registered simulation route")]
    UnknownDataset(String),
    #[error("simulator reply is not valid JSON: {0}")]
    MalformedVerdict(String),
    #[error("simulator behavior {0:?} is not continue_conversation or end_conversation")]
    InvalidBehavior(String),
    #[error("simulator chose to continue but provided no response text")]
    MissingResponse,
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(GatewayError),
    #[error("judge reply had no usable score: {0}")]
    UnparseableScore(String),
    #[error("simulator unavailable: {0}")]
    SimulatorUnavailable(GatewayError),
    #[error("memory system failed: {0}")]
    SystemFailure(#[from] MemoryError),
    #[error("case {0} carries no gold answer for the metric path")]
    MissingGold(String),
}
