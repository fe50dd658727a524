//! Protocol orchestration: wires a partition, a memory system, a gateway,
//! and the feedback simulator into complete runs, then persists everything a
//! replay needs (partition manifest, anchors, per-step reports, scores,
//! sessions, run manifest).
//!
//! Three protocols:
//! - `off_policy`: ingest a pre-generated feedback log in one shot, then
//!   evaluate the full test set once.
//! - `stepwise_off_policy`: replay the same log in batches, evaluating the
//!   full test set after each batch.
//! - `on_policy`: sample training batches, simulate the feedback sessions
//!   live against the current memory state, ingest, evaluate after each step.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::CalibrationError;
use crate::eval::{
    aggregate, check_coverage, evaluate_case, normalize_scores, AggregateReport, Anchors,
    EvalError, MetricScore,
};
use crate::gateway::{Gateway, GatewayError, GatewayProfile, GatewayRole, MockReply, MockScript};
use crate::memory::{build_system, MemoryError, MemorySystem, RetrievalConfig};
use crate::simulator::{
    DialogTurn, FeedbackSession, SessionConfig, SessionSimulator, SimulationRouter, SimulatorError,
    TerminationReason,
};
use crate::tasks::{
    build_partition, derived_seed, hex_digest, training_batches, CaseSet, FeedbackLog,
    LogProvenance, Partition, PartitionSpec, TaskCase, TaskError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    OffPolicy,
    OnPolicy,
    StepwiseOffPolicy,
}

/// Seeds past the split seed (which lives on the partition spec): `shuffle`
/// orders training batches, `action` drives per-case feedback sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub shuffle: u64,
    pub action: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    /// One of `vanilla`, `bm25-s`, `bm25-m`, `embed-s`, `embed-m`.
    pub kind: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_budget")]
    pub context_token_budget: usize,
}

fn default_top_k() -> usize {
    5
}

fn default_budget() -> usize {
    8192
}

impl SystemSpec {
    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            top_k: self.top_k,
            context_token_budget: self.context_token_budget,
        }
    }
}

/// Gateway wiring: a live HTTP endpoint, or a scripted mock whose per-role
/// replies come straight from the spec file (fixed strings only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatewaySpec {
    Http {
        profile: GatewayProfile,
    },
    Mock {
        #[serde(default)]
        replies: BTreeMap<String, String>,
        #[serde(default = "default_embed_dim")]
        embed_dim: usize,
    },
}

fn default_embed_dim() -> usize {
    8
}

impl GatewaySpec {
    pub fn build(&self) -> Result<Gateway, RunnerError> {
        match self {
            GatewaySpec::Http { profile } => Ok(Gateway::http(profile.clone())?),
            GatewaySpec::Mock { replies, embed_dim } => {
                let mut script = MockScript::new().embed_dim(*embed_dim);
                for (role, reply) in replies {
                    let role = parse_role(role).ok_or_else(|| {
                        RunnerError::Config(format!("unknown gateway role {role:?}"))
                    })?;
                    script = script.role_default(role, MockReply::fixed(reply.clone()));
                }
                Ok(Gateway::mock(script))
            }
        }
    }
}

fn parse_role(name: &str) -> Option<GatewayRole> {
    match name {
        "system" => Some(GatewayRole::System),
        "simulator" => Some(GatewayRole::Simulator),
        "judge" => Some(GatewayRole::Judge),
        "embedder" => Some(GatewayRole::Embedder),
        _ => None,
    }
}

/// Everything one run needs, loadable from a single JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub partition: PartitionSpec,
    pub system: SystemSpec,
    pub gateway: GatewaySpec,
    /// JSONL task cases, one per line.
    pub cases: PathBuf,
    /// Pre-generated session log; required for the off-policy protocols.
    #[serde(default)]
    pub feedback_log: Option<PathBuf>,
    /// Anchor file for normalization; defaults to `<output_dir>/anchors.json`.
    /// Pointing several runs at one file puts them on a shared scale.
    #[serde(default)]
    pub anchors: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    /// Optional cap on on-policy steps; otherwise the pool is exhausted.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub seeds: Seeds,
}

fn default_batch_size() -> usize {
    100
}

fn default_max_turns() -> usize {
    3
}

fn default_workers() -> usize {
    4
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), RunnerError> {
        self.validate_fields()?;
        let needs_log = matches!(
            self.protocol,
            Protocol::OffPolicy | Protocol::StepwiseOffPolicy
        );
        if needs_log && self.feedback_log.is_none() {
            return Err(RunnerError::Config(
                "off-policy protocols need a feedback_log path".into(),
            ));
        }
        Ok(())
    }

    /// Field-level checks without the protocol/log coupling; log generation
    /// and baseline evaluation accept specs whose log does not exist yet.
    fn validate_fields(&self) -> Result<(), RunnerError> {
        if self.batch_size == 0 {
            return Err(RunnerError::Config("batch_size must be at least 1".into()));
        }
        if self.max_turns == 0 {
            return Err(RunnerError::Config("max_turns must be at least 1".into()));
        }
        if !crate::memory::SYSTEM_KINDS.contains(&self.system.kind.as_str()) {
            return Err(RunnerError::Config(format!(
                "unknown memory system kind {:?}; expected one of {:?}",
                self.system.kind,
                crate::memory::SYSTEM_KINDS
            )));
        }
        Ok(())
    }

    pub fn anchors_path(&self) -> PathBuf {
        self.anchors
            .clone()
            .unwrap_or_else(|| self.output_dir.join("anchors.json"))
    }
}

/// Parses and field-checks a spec file. The protocol/log coupling is left to
/// [`execute`]: baseline evaluation and log generation take the same spec a
/// later off-policy run will use, before its log exists.
pub fn load_spec(path: &Path) -> Result<ExperimentSpec, RunnerError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
    let spec: ExperimentSpec = serde_json::from_str(&text)
        .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
    spec.validate_fields()?;
    Ok(spec)
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid run spec: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl RunnerError {
    /// Process exit code: 0 is success, 2 config/schema, 3 leakage guard,
    /// 4 gateway exhaustion, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        if let RunnerError::Task(TaskError::TestLeak(_)) = self {
            return 3;
        }
        match self.gateway_error() {
            Some(GatewayError::Exhausted { .. }) | Some(GatewayError::ScriptExhausted { .. }) => {
                return 4
            }
            Some(GatewayError::Auth(_)) => return 2,
            _ => {}
        }
        match self {
            RunnerError::Config(_) | RunnerError::Calibration(_) => 2,
            RunnerError::Task(TaskError::SchemaViolation { .. }) => 2,
            RunnerError::Memory(MemoryError::SchemaViolation(_)) => 2,
            RunnerError::Eval(EvalError::MalformedArtifact(..)) => 2,
            _ => 1,
        }
    }

    fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            RunnerError::Gateway(g) => Some(g),
            RunnerError::Memory(MemoryError::Gateway(g)) => Some(g),
            RunnerError::Eval(EvalError::Gateway(g)) => Some(g),
            RunnerError::Simulator(e) => match e {
                SimulatorError::JudgeUnavailable(g) => Some(g),
                SimulatorError::SimulatorUnavailable(g) => Some(g),
                SimulatorError::SystemFailure(MemoryError::Gateway(g)) => Some(g),
                _ => None,
            },
            _ => None,
        }
    }
}

/// Wall-clock seconds attributed to one case and phase. Training cases get
/// `memory_time` (their share of batch ingestion; absent for systems that
/// store nothing), test cases get `predict_time` (response generation only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub case_id: String,
    pub memory_time: Option<f64>,
    pub predict_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub memory_avg_seconds: Option<f64>,
    pub predict_avg_seconds: Option<f64>,
    pub records: Vec<TimingRecord>,
}

fn summarize_timing(records: Vec<TimingRecord>) -> TimingSummary {
    fn avg(values: Vec<f64>) -> Option<f64> {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
    TimingSummary {
        memory_avg_seconds: avg(records.iter().filter_map(|r| r.memory_time).collect()),
        predict_avg_seconds: avg(records.iter().filter_map(|r| r.predict_time).collect()),
        records,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub step: usize,
    pub report_hash: String,
    pub overall_normalized_mean: f64,
}

/// A training case whose live session could not be completed at all; it is
/// recorded here and excluded from ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingFailure {
    pub case_id: String,
    pub error: String,
}

/// Snapshot of a finished run: the spec it came from, fingerprints of the
/// partition and anchors it used, per-step test scores, and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: ExperimentSpec,
    pub partition_hash: String,
    pub anchors_hash: String,
    pub steps: Vec<StepScore>,
    pub failed_training_cases: Vec<TrainingFailure>,
    pub timing: TimingSummary,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), RunnerError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct RunOutput {
    /// One report per evaluation pass; the last element is the final state.
    pub reports: Vec<AggregateReport>,
    pub manifest: RunManifest,
}

/// Times a closure on the monotonic clock.
pub fn timed<T>(thunk: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = thunk();
    (out, start.elapsed().as_secs_f64())
}

/// Applies `f` to every item with up to `workers` threads, returning results
/// in item order regardless of completion order.
pub fn parallel_map<T, U, F>(items: &[T], workers: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let workers = workers.clamp(1, n);
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, U)>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                if tx.send((i, f(i, &items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut slots: Vec<Option<U>> = (0..n).map(|_| None).collect();
        for (i, u) in rx {
            slots[i] = Some(u);
        }
        slots
            .into_iter()
            .map(|s| s.expect("worker sent every index"))
            .collect()
    })
}

/// Builds the gateway from the spec and runs. The CLI entry point.
pub fn execute(spec: &ExperimentSpec) -> Result<RunOutput, RunnerError> {
    spec.validate()?;
    let gateway = Arc::new(spec.gateway.build()?);
    execute_with_gateway(spec, gateway)
}

/// Runs against a caller-supplied gateway; tests inject scripted tapes here.
pub fn execute_with_gateway(
    spec: &ExperimentSpec,
    gateway: Arc<Gateway>,
) -> Result<RunOutput, RunnerError> {
    spec.validate()?;
    let (engine, mut system) = prepare(spec, gateway)?;
    let outcome = match spec.protocol {
        Protocol::OffPolicy => engine.off_policy(system.as_mut())?,
        Protocol::StepwiseOffPolicy => engine.stepwise_off_policy(system.as_mut())?,
        Protocol::OnPolicy => engine.on_policy(system.as_mut())?,
    };
    engine.finish(outcome)
}

/// Scores the test split against the corpus-only memory state, skipping all
/// feedback. Produces the same report/manifest layout as a full run.
pub fn evaluate_only(spec: &ExperimentSpec) -> Result<RunOutput, RunnerError> {
    let gateway = Arc::new(spec.gateway.build()?);
    evaluate_only_with_gateway(spec, gateway)
}

pub fn evaluate_only_with_gateway(
    spec: &ExperimentSpec,
    gateway: Arc<Gateway>,
) -> Result<RunOutput, RunnerError> {
    let (engine, system) = prepare(spec, gateway)?;
    let (report, timing) = engine.evaluate_step(system.as_ref())?;
    engine.finish(ProtocolOutcome {
        reports: vec![report],
        timing,
        failed_training: Vec::new(),
        sessions: None,
    })
}

/// Simulates one feedback session per training case against the corpus-only
/// memory state and returns the resulting log. Nothing is ingested between
/// sessions, so the log is reusable as an off-policy corpus for any system.
pub fn generate_log(
    spec: &ExperimentSpec,
) -> Result<(FeedbackLog, Vec<TrainingFailure>), RunnerError> {
    let gateway = Arc::new(spec.gateway.build()?);
    generate_log_with_gateway(spec, gateway)
}

pub fn generate_log_with_gateway(
    spec: &ExperimentSpec,
    gateway: Arc<Gateway>,
) -> Result<(FeedbackLog, Vec<TrainingFailure>), RunnerError> {
    let (engine, system) = prepare(spec, gateway)?;
    let simulator = engine.simulator()?;
    let train_ids = engine.partition.train_ids();
    let (sessions, failures) = engine.simulate_cases(&simulator, system.as_ref(), &train_ids);
    let log = FeedbackLog::new(sessions, LogProvenance::Simulated, &engine.partition)?;
    Ok((log, failures))
}

/// Shared setup: case loading, partitioning, system construction, and the
/// corpus ingestion pass.
fn prepare<'s>(
    spec: &'s ExperimentSpec,
    gateway: Arc<Gateway>,
) -> Result<(Engine<'s>, Box<dyn MemorySystem>), RunnerError> {
    spec.validate_fields()?;
    std::fs::create_dir_all(&spec.output_dir)?;
    let cases = CaseSet::load_jsonl(&spec.cases)?;
    let partition = build_partition(&cases, &spec.partition)?;
    partition.save(&spec.output_dir.join("partition.json"))?;

    let engine = Engine {
        spec,
        gateway,
        cases,
        partition,
    };
    let mut system = build_system(
        &spec.system.kind,
        engine.gateway.clone(),
        spec.system.retrieval(),
    )?;
    engine.corpus_phase(system.as_mut())?;
    Ok((engine, system))
}

struct ProtocolOutcome {
    reports: Vec<AggregateReport>,
    timing: Vec<TimingRecord>,
    failed_training: Vec<TrainingFailure>,
    /// Live-simulated sessions, persisted so the run converts into an
    /// off-policy corpus.
    sessions: Option<FeedbackLog>,
}

struct Engine<'s> {
    spec: &'s ExperimentSpec,
    gateway: Arc<Gateway>,
    cases: CaseSet,
    partition: Partition,
}

impl Engine<'_> {
    /// Ingests every partitioned case's static context, train and test alike
    /// (task material, not feedback), deduplicated by content.
    fn corpus_phase(&self, system: &mut dyn MemorySystem) -> Result<usize, RunnerError> {
        let mut ordered: Vec<&TaskCase> = Vec::new();
        for split in &self.partition.splits {
            for id in split.train.iter().chain(split.test.iter()) {
                ordered.push(self.case(id));
            }
        }
        let mut added = 0;
        for (case_id, passages) in crate::memory::dedupe_corpus(ordered) {
            added += system.ingest_corpus(&case_id, &passages)?;
        }
        Ok(added)
    }

    fn case(&self, id: &str) -> &TaskCase {
        self.cases
            .get(id)
            .expect("partition ids come from the case set")
    }

    /// Batch-ingests sessions, attributing the elapsed wall time evenly to
    /// the sessions the system actually stores (error-terminated ones are
    /// skipped inside `ingest_sessions`).
    fn ingest_timed(
        &self,
        system: &mut dyn MemorySystem,
        sessions: &[FeedbackSession],
    ) -> Result<Vec<TimingRecord>, RunnerError> {
        let stores_nothing = system.name() == "vanilla";
        let eligible: Vec<&FeedbackSession> = sessions
            .iter()
            .filter(|s| s.terminated_by != TerminationReason::Error)
            .collect();
        let (res, elapsed) = timed(|| system.ingest_sessions(sessions));
        res?;
        let share = elapsed / eligible.len().max(1) as f64;
        Ok(eligible
            .iter()
            .map(|s| TimingRecord {
                case_id: s.case_id.clone(),
                memory_time: if stores_nothing { None } else { Some(share) },
                predict_time: None,
            })
            .collect())
    }

    /// Answers and scores the full test set against the current memory
    /// state. Memory is read-only here; entry counts are checked to prove no
    /// test-time ingestion happened.
    fn evaluate_step(
        &self,
        system: &dyn MemorySystem,
    ) -> Result<(AggregateReport, Vec<TimingRecord>), RunnerError> {
        let test_ids = self.partition.test_ids();
        let entries_before = system.entry_count();
        let outcomes = parallel_map(&test_ids, self.spec.workers, |_, id| {
            let case = self.case(id);
            let (score, predict) = self.score_case(system, case);
            let record = TimingRecord {
                case_id: id.clone(),
                memory_time: None,
                predict_time: Some(predict),
            };
            (score, record)
        });
        assert_eq!(
            system.entry_count(),
            entries_before,
            "memory must not grow during evaluation"
        );
        let (mut scores, records): (Vec<MetricScore>, Vec<TimingRecord>) =
            outcomes.into_iter().unzip();
        check_coverage(&test_ids, &scores)?;
        let anchors = Anchors::ensure(&self.spec.anchors_path(), &scores)?;
        normalize_scores(&mut scores, &anchors);
        Ok((aggregate(scores), records))
    }

    /// One test case end to end: retrieve once, answer, score. Any failure
    /// is folded into a flagged zero score instead of aborting the run.
    fn score_case(&self, system: &dyn MemorySystem, case: &TaskCase) -> (MetricScore, f64) {
        let failure = || MetricScore::failure(&case.case_id, &case.dataset, case.eval.metric);
        let memories = match system.retrieve(&case.query) {
            Ok(m) => m,
            Err(_) => return (failure(), 0.0),
        };
        let turns = vec![DialogTurn::user(case.query.clone(), 0)];
        let (response, predict) = timed(|| system.respond(case, &memories, &turns));
        let score = match response {
            Ok(text) => match evaluate_case(self.gateway.as_ref(), case, &text) {
                Ok(raw) => MetricScore::ok(&case.case_id, &case.dataset, case.eval.metric, raw),
                Err(_) => failure(),
            },
            Err(_) => failure(),
        };
        (score, predict)
    }

    fn off_policy(&self, system: &mut dyn MemorySystem) -> Result<ProtocolOutcome, RunnerError> {
        let log = self.import_log()?;
        let mut timing = self.ingest_timed(system, &log.sessions)?;
        let (report, predict) = self.evaluate_step(system)?;
        timing.extend(predict);
        Ok(ProtocolOutcome {
            reports: vec![report],
            timing,
            failed_training: Vec::new(),
            sessions: None,
        })
    }

    fn stepwise_off_policy(
        &self,
        system: &mut dyn MemorySystem,
    ) -> Result<ProtocolOutcome, RunnerError> {
        let log = self.import_log()?;
        let mut reports = Vec::new();
        let mut timing = Vec::new();
        if log.sessions.is_empty() {
            let (report, predict) = self.evaluate_step(system)?;
            timing.extend(predict);
            reports.push(report);
        } else {
            for batch in log.sessions.chunks(self.spec.batch_size) {
                timing.extend(self.ingest_timed(system, batch)?);
                let (report, predict) = self.evaluate_step(system)?;
                timing.extend(predict);
                reports.push(report);
            }
        }
        Ok(ProtocolOutcome {
            reports,
            timing,
            failed_training: Vec::new(),
            sessions: None,
        })
    }

    fn simulator(&self) -> Result<SessionSimulator, RunnerError> {
        Ok(SessionSimulator::new(
            self.gateway.clone(),
            SimulationRouter::from_cases(&self.cases),
        )?
        .with_config(SessionConfig {
            max_turns: self.spec.max_turns,
            ..SessionConfig::default()
        }))
    }

    /// Runs one live session per case id against a frozen memory view. Each
    /// case gets its own rng derived from the action seed, so results do not
    /// depend on worker scheduling.
    fn simulate_cases(
        &self,
        simulator: &SessionSimulator,
        system: &dyn MemorySystem,
        ids: &[String],
    ) -> (Vec<FeedbackSession>, Vec<TrainingFailure>) {
        let outcomes = parallel_map(ids, self.spec.workers, |_, id| {
            let case = self.case(id);
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(self.spec.seeds.action, id));
            let memories = match system.retrieve(&case.query) {
                Ok(m) => m,
                Err(e) => return Err((id.clone(), e.to_string())),
            };
            simulator
                .simulate_session(case, &mut rng, |turns| {
                    system.respond(case, &memories, turns)
                })
                .map_err(|e| (id.clone(), e.to_string()))
        });
        let mut sessions = Vec::new();
        let mut failures = Vec::new();
        for outcome in outcomes {
            match outcome {
                Ok(session) => sessions.push(session),
                Err((case_id, error)) => failures.push(TrainingFailure { case_id, error }),
            }
        }
        (sessions, failures)
    }

    fn on_policy(&self, system: &mut dyn MemorySystem) -> Result<ProtocolOutcome, RunnerError> {
        let simulator = self.simulator()?;
        let mut batches = training_batches(
            &self.partition,
            self.spec.batch_size,
            self.spec.seeds.shuffle,
        );
        if let Some(cap) = self.spec.steps {
            batches.truncate(cap);
        }

        let mut reports = Vec::new();
        let mut timing = Vec::new();
        let mut failed_training = Vec::new();
        let mut all_sessions: Vec<FeedbackSession> = Vec::new();

        if batches.is_empty() {
            let (report, predict) = self.evaluate_step(system)?;
            timing.extend(predict);
            reports.push(report);
        }
        for batch in &batches {
            let (batch_sessions, failures) = self.simulate_cases(&simulator, &*system, batch);
            failed_training.extend(failures);
            timing.extend(self.ingest_timed(system, &batch_sessions)?);
            all_sessions.extend(batch_sessions);
            let (report, predict) = self.evaluate_step(system)?;
            timing.extend(predict);
            reports.push(report);
        }

        let sessions = FeedbackLog::new(all_sessions, LogProvenance::Simulated, &self.partition)?;
        Ok(ProtocolOutcome {
            reports,
            timing,
            failed_training,
            sessions: Some(sessions),
        })
    }

    fn import_log(&self) -> Result<FeedbackLog, RunnerError> {
        let path = self
            .spec
            .feedback_log
            .as_ref()
            .expect("validate() requires a log for off-policy protocols");
        Ok(FeedbackLog::import_jsonl(path, &self.partition)?)
    }

    /// Persists reports, scores, sessions, and the manifest.
    fn finish(&self, outcome: ProtocolOutcome) -> Result<RunOutput, RunnerError> {
        let out = &self.spec.output_dir;
        let reports = outcome.reports;
        debug_assert!(
            !reports.is_empty(),
            "every protocol evaluates at least once"
        );
        if reports.len() > 1 {
            for (i, report) in reports.iter().enumerate() {
                report.save(&out.join(format!("report_step{}.json", i + 1)))?;
            }
        }
        let last = reports.last().expect("at least one report");
        last.save(&out.join("report.json"))?;

        let mut scores = String::new();
        for score in &last.cases {
            scores.push_str(&serde_json::to_string(score).expect("score serializes"));
            scores.push('\n');
        }
        std::fs::write(out.join("scores.jsonl"), scores)?;

        if let Some(log) = &outcome.sessions {
            log.save_jsonl(&out.join("sessions.jsonl"))?;
        }

        let anchors_bytes = std::fs::read(self.spec.anchors_path())?;
        let manifest = RunManifest {
            spec: self.spec.clone(),
            partition_hash: self.partition.hash(),
            anchors_hash: hex_digest(&anchors_bytes),
            steps: reports
                .iter()
                .enumerate()
                .map(|(i, r)| StepScore {
                    step: i + 1,
                    report_hash: r.hash(),
                    overall_normalized_mean: r.overall_normalized_mean,
                })
                .collect(),
            failed_training_cases: outcome.failed_training,
            timing: summarize_timing(outcome.timing),
        };
        manifest.save(&out.join("manifest.json"))?;
        Ok(RunOutput { reports, manifest })
    }
}
