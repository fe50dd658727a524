//! Shared task taxonomy types used across modules.

use serde::{Deserialize, Serialize};

/// Input/output length class of a task. Retrieval and the copy action care
/// about the output side: copying is only meaningful for long generations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskFormat {
    /// Long input, short output (e.g. reading comprehension over a corpus).
    #[serde(rename = "liso")]
    LiSo,
    /// Short input, long output (e.g. writing from a brief).
    #[serde(rename = "silo")]
    SiLo,
    /// Long input, long output.
    #[serde(rename = "lilo")]
    LiLo,
    /// Short input, short output.
    #[serde(rename = "siso")]
    SiSo,
}

impl TaskFormat {
    /// Formats whose outputs are long-form text a user might copy out.
    pub fn long_output(self) -> bool {
        matches!(self, TaskFormat::SiLo | TaskFormat::LiLo)
    }
}

impl std::fmt::Display for TaskFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskFormat::LiSo => "liso",
            TaskFormat::SiLo => "silo",
            TaskFormat::LiLo => "lilo",
            TaskFormat::SiSo => "siso",
        };
        write!(f, "{s}")
    }
}

/// Coarse domain grouping used for reporting breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Open,
    Legal,
    Academic,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Domain::Open => "open",
            Domain::Legal => "legal",
            Domain::Academic => "academic",
        };
        write!(f, "{s}")
    }
}

/// The closed set of primary metrics a dataset can declare. `F1` and
/// `Accuracy` are verifiable against a gold answer and drive the metric
/// simulation path; the rest score generation quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    F1,
    Accuracy,
    RougeL,
    Meteor,
    /// Rubric-filling judge prompt returning an integer 1..=10.
    JudgeRubric,
}

impl MetricKind {
    /// Metrics whose score is computable from (prediction, gold) alone.
    pub fn verifiable(self) -> bool {
        matches!(self, MetricKind::F1 | MetricKind::Accuracy)
    }

    /// Metrics that require a non-empty gold reference on the case.
    pub fn needs_gold(self) -> bool {
        !matches!(self, MetricKind::JudgeRubric)
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MetricKind::F1 => "f1",
            MetricKind::Accuracy => "accuracy",
            MetricKind::RougeL => "rouge_l",
            MetricKind::Meteor => "meteor",
            MetricKind::JudgeRubric => "judge_rubric",
        };
        write!(f, "{s}")
    }
}
