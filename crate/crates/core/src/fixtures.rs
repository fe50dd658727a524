//! Canned cases, sessions, and corpora for tests and benchmarks. Kept in the
//! library (not behind `cfg(test)`) so integration tests and benches can use
//! the same builders as unit tests.

use crate::action::{PrimaryAction, SatisfactionScore, UserAction};
use crate::simulator::{DialogTurn, FeedbackSession, TerminationReason};
use crate::tasks::{CaseSet, EvalSpec, TaskCase};
use crate::types::{Domain, MetricKind, TaskFormat};

fn base_eval(metric: MetricKind, gold: Option<&str>) -> EvalSpec {
    EvalSpec {
        metric,
        gold: gold.map(str::to_string),
        criteria: Vec::new(),
        judge_template: None,
        slots: serde_json::Map::new(),
    }
}

/// Short-answer case scored by token F1. Gold answer: "Paris".
pub fn f1_case(id: &str, dataset: &str) -> TaskCase {
    TaskCase {
        case_id: id.into(),
        dataset: dataset.into(),
        query: "What is the capital of France?".into(),
        format: TaskFormat::LiSo,
        domain: Domain::Open,
        language: "English".into(),
        context: Vec::new(),
        eval: base_eval(MetricKind::F1, Some("Paris")),
    }
}

/// Multiple-choice style case scored by exact match. Gold answer: "42".
pub fn accuracy_case(id: &str, dataset: &str) -> TaskCase {
    TaskCase {
        case_id: id.into(),
        dataset: dataset.into(),
        query: "Which option gives six times seven?".into(),
        format: TaskFormat::LiSo,
        domain: Domain::Open,
        language: "English".into(),
        context: Vec::new(),
        eval: base_eval(MetricKind::Accuracy, Some("42")),
    }
}

/// Summarization-style case scored by ROUGE-L.
pub fn rouge_case(id: &str, dataset: &str) -> TaskCase {
    TaskCase {
        case_id: id.into(),
        dataset: dataset.into(),
        query: "Summarize the findings of the attached study in one paragraph.".into(),
        format: TaskFormat::SiLo,
        domain: Domain::Academic,
        language: "English".into(),
        context: Vec::new(),
        eval: base_eval(MetricKind::RougeL, Some("the study finds strong effects")),
    }
}

/// Generation case scored by METEOR.
pub fn meteor_case(id: &str, dataset: &str) -> TaskCase {
    let mut case = rouge_case(id, dataset);
    case.eval.metric = MetricKind::Meteor;
    case
}

/// Long-form case graded by a rubric-driven judge model.
pub fn judge_case(id: &str, dataset: &str) -> TaskCase {
    let mut slots = serde_json::Map::new();
    slots.insert("BERTSCORE_F1".into(), serde_json::json!(0.85));
    slots.insert("CLI".into(), serde_json::json!(11.2));
    slots.insert("FKGL".into(), serde_json::json!(9.8));
    slots.insert("DCRS".into(), serde_json::json!(8.1));
    TaskCase {
        case_id: id.into(),
        dataset: dataset.into(),
        query: "Write a news article for general readers about the attached paper.".into(),
        format: TaskFormat::SiLo,
        domain: Domain::Academic,
        language: "English".into(),
        context: Vec::new(),
        eval: EvalSpec {
            metric: MetricKind::JudgeRubric,
            gold: Some("Researchers announced a new result with broad implications.".into()),
            criteria: vec!["Accessible to non-experts".into()],
            judge_template: Some("science_news".into()),
            slots,
        },
    }
}

/// A case grounded in static passages, for memory-ingestion tests.
pub fn corpus_case(id: &str, dataset: &str, passages: &[&str]) -> TaskCase {
    let mut case = f1_case(id, dataset);
    case.context = passages.iter().map(|p| p.to_string()).collect();
    case
}

pub fn case_set(cases: Vec<TaskCase>) -> CaseSet {
    CaseSet::new(cases).expect("fixture cases are valid")
}

/// One dataset per metric kind, one case each.
pub fn mixed_metric_cases() -> CaseSet {
    case_set(vec![
        f1_case("f1-0", "qa"),
        accuracy_case("acc-0", "choices"),
        rouge_case("rouge-0", "summaries"),
        meteor_case("meteor-0", "generation"),
        judge_case("judge-0", "news"),
    ])
}

/// Smallest valid session: one exchange, satisfied, liked.
pub fn minimal_session(case_id: &str, dataset: &str) -> FeedbackSession {
    FeedbackSession {
        case_id: case_id.into(),
        dataset: dataset.into(),
        turns: vec![
            DialogTurn::user(format!("question for {case_id}"), 0),
            DialogTurn::assistant(format!("answer for {case_id}"), 1),
        ],
        satisfaction: vec![SatisfactionScore::new(9).expect("9 is in range")],
        actions: vec![UserAction {
            primary: PrimaryAction::Like,
            copied: false,
        }],
        terminated_by: TerminationReason::SimulatorEnd,
    }
}

/// Deterministic filler text: `n` distinct words sharing a prefix.
pub fn words(prefix: &str, n: usize) -> String {
    (0..n)
        .map(|i| format!("{prefix}{i}"))
        .collect::<Vec<_>>()
        .join(" ")
}
