//! Task cases, train/test partitioning, and feedback-log bookkeeping.
//!
//! Cases arrive as JSONL (one case per line, schema-checked on load). A
//! partition samples each dataset down to a cap with a seeded shuffle and
//! splits 4:1 into train and test; its membership manifest is serializable
//! and hashable so reruns can prove they used the same split. Feedback logs
//! are validated against the partition on import, and any session touching a
//! test case is a hard failure: test data must never reach memory.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::simulator::FeedbackSession;
use crate::types::{Domain, MetricKind, TaskFormat};

/// Everything the evaluator needs to score a case: the metric, optionally a
/// gold reference and grading criteria, a judge rubric id, and pass-through
/// values for rubric slots computed offline (readability indices and such).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub metric: MetricKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub criteria: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_template: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub slots: serde_json::Map<String, serde_json::Value>,
}

/// One task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCase {
    pub case_id: String,
    pub dataset: String,
    pub query: String,
    pub format: TaskFormat,
    pub domain: Domain,
    #[serde(default = "default_language")]
    pub language: String,
    /// Static knowledge the task is grounded in, one session/passage per
    /// element, in reading order. Empty for tasks without a corpus.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context: Vec<String>,
    pub eval: EvalSpec,
}

fn default_language() -> String {
    "English".to_string()
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("schema violation at {location}: {reason}")]
    SchemaViolation { location: String, reason: String },
    #[error("dataset {0} has no cases")]
    EmptyDataset(String),
    #[error("case {0} is not in the training partition")]
    UnknownCase(String),
    #[error("feedback log references test case {0}")]
    TestLeak(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn schema_err(location: impl Into<String>, reason: impl Into<String>) -> TaskError {
    TaskError::SchemaViolation {
        location: location.into(),
        reason: reason.into(),
    }
}

/// An id-indexed, order-preserving collection of validated cases.
#[derive(Debug, Clone, Default)]
pub struct CaseSet {
    cases: Vec<TaskCase>,
    by_id: HashMap<String, usize>,
}

impl CaseSet {
    pub fn new(cases: Vec<TaskCase>) -> Result<Self, TaskError> {
        let mut set = CaseSet::default();
        for case in cases {
            set.push(case)?;
        }
        Ok(set)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, TaskError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut set = CaseSet::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let location = format!("{}:{}", path.display(), i + 1);
            let case: TaskCase =
                serde_json::from_str(&line).map_err(|e| schema_err(&location, e.to_string()))?;
            set.push(case).map_err(|e| match e {
                TaskError::SchemaViolation { reason, .. } => schema_err(&location, reason),
                other => other,
            })?;
        }
        Ok(set)
    }

    fn push(&mut self, case: TaskCase) -> Result<(), TaskError> {
        validate_case(&case)?;
        if self.by_id.contains_key(&case.case_id) {
            return Err(schema_err(&case.case_id, "duplicate case_id"));
        }
        self.by_id.insert(case.case_id.clone(), self.cases.len());
        self.cases.push(case);
        Ok(())
    }

    pub fn get(&self, case_id: &str) -> Option<&TaskCase> {
        self.by_id.get(case_id).map(|&i| &self.cases[i])
    }

    pub fn cases(&self) -> &[TaskCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Dataset names in first-appearance order.
    pub fn datasets(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for c in &self.cases {
            if seen.insert(c.dataset.as_str()) {
                out.push(c.dataset.clone());
            }
        }
        out
    }
}

fn validate_case(case: &TaskCase) -> Result<(), TaskError> {
    let loc = if case.case_id.is_empty() {
        "<case>"
    } else {
        case.case_id.as_str()
    };
    if case.case_id.trim().is_empty() {
        return Err(schema_err(loc, "case_id is empty"));
    }
    if case.dataset.trim().is_empty() {
        return Err(schema_err(loc, "dataset is empty"));
    }
    if case.query.trim().is_empty() {
        return Err(schema_err(loc, "query is empty"));
    }
    let has_gold = case
        .eval
        .gold
        .as_deref()
        .is_some_and(|g| !g.trim().is_empty());
    if case.eval.metric.needs_gold() && !has_gold {
        return Err(schema_err(
            loc,
            format!("metric {} requires a gold answer", case.eval.metric),
        ));
    }
    if case.eval.metric == MetricKind::JudgeRubric && case.eval.judge_template.is_none() {
        return Err(schema_err(
            loc,
            "metric judge_rubric requires a judge_template",
        ));
    }
    Ok(())
}

/// How a partition is drawn: which datasets, the per-dataset sample cap, and
/// the shuffle seed. The test share is fixed at one fifth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub name: String,
    pub datasets: Vec<String>,
    #[serde(default = "default_sample_cap")]
    pub sample_cap: usize,
    pub seed: u64,
}

fn default_sample_cap() -> usize {
    250
}

pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub dataset: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Materialized train/test membership. Serializing this struct *is* the
/// partition manifest; [`Partition::hash`] fingerprints it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub name: String,
    pub seed: u64,
    pub sample_cap: usize,
    pub splits: Vec<DatasetSplit>,
}

impl Partition {
    pub fn train_ids(&self) -> Vec<String> {
        self.splits
            .iter()
            .flat_map(|s| s.train.iter().cloned())
            .collect()
    }

    pub fn test_ids(&self) -> Vec<String> {
        self.splits
            .iter()
            .flat_map(|s| s.test.iter().cloned())
            .collect()
    }

    pub fn train_set(&self) -> HashSet<&str> {
        self.splits
            .iter()
            .flat_map(|s| s.train.iter().map(String::as_str))
            .collect()
    }

    pub fn test_set(&self) -> HashSet<&str> {
        self.splits
            .iter()
            .flat_map(|s| s.test.iter().map(String::as_str))
            .collect()
    }

    /// SHA-256 over the compact JSON manifest, hex-encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("partition serializes");
        hex_digest(json.as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), TaskError> {
        let json = serde_json::to_string_pretty(self).expect("partition serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| schema_err(path.display().to_string(), e.to_string()))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Stable sub-seed: SHA-256 of the base seed and a label, truncated. Keeps
/// per-dataset shuffles independent of how many datasets precede them.
pub fn derived_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Draws the partition: per dataset, shuffle case ids with a seed derived
/// from (spec.seed, dataset), keep at most `sample_cap`, then send the last
/// fifth (rounded) to test and the rest to train.
pub fn build_partition(cases: &CaseSet, spec: &PartitionSpec) -> Result<Partition, TaskError> {
    if spec.datasets.is_empty() {
        return Err(schema_err(&spec.name, "partition lists no datasets"));
    }
    let mut by_dataset: HashMap<&str, Vec<&str>> = HashMap::new();
    for case in cases.cases() {
        by_dataset
            .entry(&case.dataset)
            .or_default()
            .push(&case.case_id);
    }
    let mut splits = Vec::with_capacity(spec.datasets.len());
    for dataset in &spec.datasets {
        let Some(ids) = by_dataset.get(dataset.as_str()) else {
            return Err(TaskError::EmptyDataset(dataset.clone()));
        };
        let mut ids: Vec<&str> = ids.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(spec.seed, dataset));
        ids.shuffle(&mut rng);
        ids.truncate(spec.sample_cap);
        let test_n = (TEST_FRACTION * ids.len() as f64).round() as usize;
        let train_n = ids.len() - test_n;
        splits.push(DatasetSplit {
            dataset: dataset.clone(),
            train: ids[..train_n].iter().map(|s| s.to_string()).collect(),
            test: ids[train_n..].iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(Partition {
        name: spec.name.clone(),
        seed: spec.seed,
        sample_cap: spec.sample_cap,
        splits,
    })
}

/// Shuffles the pooled training ids (all datasets together) and chunks them
/// into batches of `batch_size`; the last batch keeps the remainder.
pub fn training_batches(partition: &Partition, batch_size: usize, seed: u64) -> Vec<Vec<String>> {
    let mut pool = partition.train_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, "training-batches"));
    pool.shuffle(&mut rng);
    if batch_size == 0 {
        return if pool.is_empty() {
            Vec::new()
        } else {
            vec![pool]
        };
    }
    pool.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Where a feedback log came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogProvenance {
    Simulated,
    Imported,
}

/// Validated training feedback: every session belongs to a training case.
#[derive(Debug, Clone)]
pub struct FeedbackLog {
    pub sessions: Vec<FeedbackSession>,
    pub provenance: LogProvenance,
}

impl FeedbackLog {
    pub fn new(
        sessions: Vec<FeedbackSession>,
        provenance: LogProvenance,
        partition: &Partition,
    ) -> Result<Self, TaskError> {
        let train = partition.train_set();
        let test = partition.test_set();
        for session in &sessions {
            session
                .validate()
                .map_err(|reason| schema_err(&session.case_id, reason))?;
            if test.contains(session.case_id.as_str()) {
                return Err(TaskError::TestLeak(session.case_id.clone()));
            }
            if !train.contains(session.case_id.as_str()) {
                return Err(TaskError::UnknownCase(session.case_id.clone()));
            }
        }
        Ok(Self {
            sessions,
            provenance,
        })
    }

    /// Reads a session-per-line JSONL file and validates it against the
    /// partition. Sessions keep file order.
    pub fn import_jsonl(path: &Path, partition: &Partition) -> Result<Self, TaskError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut sessions = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let location = format!("{}:{}", path.display(), i + 1);
            let session: FeedbackSession =
                serde_json::from_str(&line).map_err(|e| schema_err(&location, e.to_string()))?;
            sessions.push(session);
        }
        Self::new(sessions, LogProvenance::Imported, partition)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), TaskError> {
        let mut out = String::new();
        for session in &self.sessions {
            out.push_str(&serde_json::to_string(session).expect("session serializes"));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
