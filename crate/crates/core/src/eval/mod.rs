//! Test-phase scoring: per-case raw metrics, per-dataset min-max
//! normalization against persisted anchors, cross-dataset aggregation, and
//! the report fingerprint reruns are checked against.

pub mod judge;
pub mod metrics;

pub use judge::{build_rubric_prompt, fill_template, judge_rubric_score, rubric_template};
pub use metrics::{exact_match, meteor, rouge_l, token_f1};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, GatewayRole};
use crate::tasks::{hex_digest, TaskCase};
use crate::types::MetricKind;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("case {0} has no gold answer to score against")]
    MissingGold(String),
    #[error("no rubric template registered under {0:?}")]
    UnknownTemplate(String),
    #[error("rubric slot {{{0}}} has no value")]
    MissingSlot(String),
    #[error("judge reply had no usable grade: {0}")]
    UnparseableScore(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("scores do not cover the test set: missing {missing:?}, unexpected {unexpected:?}")]
    IncompleteCoverage {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("unreadable artifact {0}: {1}")]
    MalformedArtifact(String, String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Equality check with a judge fallback: normalized string match first, and
/// only on mismatch ask the judge model whether the two answers agree.
pub fn exact_match_with_fallback(
    gateway: &Gateway,
    query: &str,
    response: &str,
    gold: &str,
) -> Result<bool, EvalError> {
    if exact_match(response, gold) {
        return Ok(true);
    }
    let prompt = format!(
        "Question: {query}\n\
         Reference answer: {gold}\n\
         Candidate answer: {response}\n\
         \n\
         Does the candidate answer convey the same answer as the reference? \
         Reply with exactly \"yes\" or \"no\"."
    );
    let mut messages = vec![ChatMessage::user(prompt)];
    let reply = gateway.chat(GatewayRole::Judge, &ChatRequest::new(messages.clone()))?;
    match parse_yes_no(&reply) {
        Some(v) => Ok(v),
        None => {
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user("Reply with exactly \"yes\" or \"no\"."));
            let retry = gateway.chat(GatewayRole::Judge, &ChatRequest::new(messages))?;
            parse_yes_no(&retry).ok_or(EvalError::UnparseableScore(retry))
        }
    }
}

fn parse_yes_no(raw: &str) -> Option<bool> {
    let lower = raw.to_lowercase();
    let yes = lower.find("yes");
    let no = lower.find("no");
    match (yes, no) {
        (Some(y), Some(n)) => Some(y < n),
        (Some(_), None) => Some(true),
        (None, Some(_)) => Some(false),
        (None, None) => None,
    }
}

/// Scores one response. All metrics return raw values in `[0, 1]`; rubric
/// grades are mapped from 1..=10 onto that interval by dividing by 10.
pub fn evaluate_case(gateway: &Gateway, case: &TaskCase, response: &str) -> Result<f64, EvalError> {
    let gold = || {
        case.eval
            .gold
            .as_deref()
            .ok_or_else(|| EvalError::MissingGold(case.case_id.clone()))
    };
    let raw = match case.eval.metric {
        MetricKind::F1 => token_f1(response, gold()?),
        MetricKind::Accuracy => {
            if exact_match_with_fallback(gateway, &case.query, response, gold()?)? {
                1.0
            } else {
                0.0
            }
        }
        MetricKind::RougeL => rouge_l(response, gold()?),
        MetricKind::Meteor => meteor(response, gold()?),
        MetricKind::JudgeRubric => {
            f64::from(judge_rubric_score(gateway, case, response)?) / f64::from(judge::RUBRIC_MAX)
        }
    };
    Ok(raw)
}

/// One scored test case. `failed` marks cases whose response or scoring
/// errored; they carry zero scores so the denominator never shrinks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub case_id: String,
    pub dataset: String,
    pub metric: MetricKind,
    pub raw: f64,
    pub normalized: f64,
    #[serde(default)]
    pub failed: bool,
}

impl MetricScore {
    pub fn ok(case_id: &str, dataset: &str, metric: MetricKind, raw: f64) -> Self {
        Self {
            case_id: case_id.into(),
            dataset: dataset.into(),
            metric,
            raw,
            normalized: 0.0,
            failed: false,
        }
    }

    pub fn failure(case_id: &str, dataset: &str, metric: MetricKind) -> Self {
        Self {
            case_id: case_id.into(),
            dataset: dataset.into(),
            metric,
            raw: 0.0,
            normalized: 0.0,
            failed: true,
        }
    }
}

/// Per-dataset score range used for min-max normalization. `lower_better`
/// flips the scale for metrics where smaller raw values win.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorRange {
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub lower_better: bool,
}

/// Maps a raw value onto `[0, 1]` within its anchor range, clipping outliers.
/// A degenerate range (max not above min) pins everything to 0.5.
pub fn min_max_normalize(value: f64, range: AnchorRange) -> f64 {
    let span = range.max - range.min;
    let scaled = if span <= 0.0 {
        0.5
    } else {
        ((value - range.min) / span).clamp(0.0, 1.0)
    };
    if range.lower_better {
        1.0 - scaled
    } else {
        scaled
    }
}

/// Dataset name to anchor range. Anchors are computed once from a reference
/// run and persisted, so later runs normalize onto the same scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub ranges: BTreeMap<String, AnchorRange>,
}

impl Anchors {
    /// Observed raw min/max per dataset, ignoring failed cases.
    pub fn compute(scores: &[MetricScore]) -> Self {
        let mut ranges: BTreeMap<String, AnchorRange> = BTreeMap::new();
        for s in scores.iter().filter(|s| !s.failed) {
            let r = ranges.entry(s.dataset.clone()).or_insert(AnchorRange {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
                lower_better: false,
            });
            r.min = r.min.min(s.raw);
            r.max = r.max.max(s.raw);
        }
        Self { ranges }
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| EvalError::MalformedArtifact(path.display().to_string(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let json = serde_json::to_string_pretty(self).expect("anchors serialize");
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Loads anchors from `path` if present; otherwise computes them from
    /// `scores` and persists them there for future runs.
    pub fn ensure(path: &Path, scores: &[MetricScore]) -> Result<Self, EvalError> {
        if path.exists() {
            return Self::load(path);
        }
        let anchors = Self::compute(scores);
        anchors.save(path)?;
        Ok(anchors)
    }

    pub fn range_for(&self, dataset: &str) -> Option<AnchorRange> {
        self.ranges.get(dataset).copied()
    }
}

/// Fills in each score's normalized value. Failed cases take the worst raw
/// value the dataset's anchor allows and a normalized zero, so they drag the
/// mean down without ever leaving the anchor scale. A dataset without an
/// anchor normalizes over a degenerate range (0.5), which `Anchors::compute`
/// never produces for datasets it has seen.
pub fn normalize_scores(scores: &mut [MetricScore], anchors: &Anchors) {
    for s in scores.iter_mut() {
        let range = anchors.range_for(&s.dataset).unwrap_or(AnchorRange {
            min: 0.0,
            max: 0.0,
            lower_better: false,
        });
        if s.failed {
            s.raw = if range.lower_better {
                range.max
            } else {
                range.min
            };
            s.normalized = 0.0;
            continue;
        }
        s.normalized = min_max_normalize(s.raw, range);
    }
}

/// Population z-scores (σ over n, not n−1). A constant or empty series maps
/// to all zeros rather than dividing by a vanishing spread.
pub fn z_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sigma = variance.sqrt();
    if sigma < 1e-12 {
        return vec![0.0; n];
    }
    values.iter().map(|v| (v - mean) / sigma).collect()
}

/// Verifies the scored ids are exactly the expected ids.
pub fn check_coverage(expected: &[String], scored: &[MetricScore]) -> Result<(), EvalError> {
    let want: BTreeSet<&str> = expected.iter().map(String::as_str).collect();
    let got: BTreeSet<&str> = scored.iter().map(|s| s.case_id.as_str()).collect();
    let missing: Vec<String> = want.difference(&got).map(|s| s.to_string()).collect();
    let unexpected: Vec<String> = got.difference(&want).map(|s| s.to_string()).collect();
    if missing.is_empty() && unexpected.is_empty() {
        Ok(())
    } else {
        Err(EvalError::IncompleteCoverage {
            missing,
            unexpected,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub cases: usize,
    pub failed: usize,
    pub raw_mean: f64,
    pub normalized_mean: f64,
}

/// Full evaluation result. The hash fingerprints the compact JSON encoding,
/// so any change in scores, ordering, or aggregation shows up as a new hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub per_dataset: Vec<DatasetSummary>,
    /// Mean normalized score over every case, all datasets pooled unweighted.
    pub overall_normalized_mean: f64,
    pub failed_cases: Vec<String>,
    pub cases: Vec<MetricScore>,
}

impl AggregateReport {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("report serializes");
        hex_digest(json.as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| EvalError::MalformedArtifact(path.display().to_string(), e.to_string()))
    }
}

/// Rolls scored cases up into the report. Dataset summaries are ordered by
/// name; case order is preserved as given. Failed cases count in every
/// denominator with zero scores.
pub fn aggregate(cases: Vec<MetricScore>) -> AggregateReport {
    let mut grouped: BTreeMap<String, Vec<&MetricScore>> = BTreeMap::new();
    for score in &cases {
        grouped
            .entry(score.dataset.clone())
            .or_default()
            .push(score);
    }
    let per_dataset: Vec<DatasetSummary> = grouped
        .into_iter()
        .map(|(dataset, scores)| {
            let n = scores.len() as f64;
            DatasetSummary {
                dataset,
                cases: scores.len(),
                failed: scores.iter().filter(|s| s.failed).count(),
                raw_mean: scores.iter().map(|s| s.raw).sum::<f64>() / n,
                normalized_mean: scores.iter().map(|s| s.normalized).sum::<f64>() / n,
            }
        })
        .collect();
    let overall_normalized_mean = if cases.is_empty() {
        0.0
    } else {
        cases.iter().map(|s| s.normalized).sum::<f64>() / cases.len() as f64
    };
    let mut failed_cases: Vec<String> = cases
        .iter()
        .filter(|s| s.failed)
        .map(|s| s.case_id.clone())
        .collect();
    failed_cases.sort();
    AggregateReport {
        per_dataset,
        overall_normalized_mean,
        failed_cases,
        cases,
    }
}
