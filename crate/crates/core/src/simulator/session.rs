//! Session state machine. Each training case becomes a short dialog: the
//! system answers, satisfaction is scored, an action is sampled, and either
//! the dialog ends or the simulated user pushes back and the system tries
//! again, up to the assistant-turn cap.

use std::sync::Arc;

use rand::Rng;

use crate::action::{
    self, calibrate_binary, calibrate_sigmoid, sample_action, BinaryActionModel, CalibrationError,
    SatisfactionScore, SigmoidActionModel, SigmoidShape,
};
use crate::eval::metrics::{exact_match, token_f1};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayRole};
use crate::memory::MemoryError;
use crate::tasks::TaskCase;
use crate::text::extract_first_json_object;
use crate::types::MetricKind;

use super::prompts::{
    build_profile_prompt, build_test_prompt, render_evaluation_context, satisfaction_prompts,
    REINSTRUCTION,
};
use super::{
    Behavior, DialogTurn, FeedbackSession, ProfileRegistry, SimulationPath, SimulationRouter,
    SimulatorError, SimulatorVerdict, TerminationReason,
};

const SCORE_REINSTRUCTION: &str = "Your previous reply was not usable. Respond with only the \
JSON object {\"score\": <integer from 1-10>}.";

/// Knobs of the session loop.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    /// Hard cap on assistant turns per session.
    pub max_turns: usize,
    /// Metric-path sessions end once satisfaction reaches this grade.
    pub satisfied_threshold: u8,
    /// Metric-path closing user turn when satisfied.
    pub positive_close: String,
    /// Metric-path follow-up user turn when unsatisfied.
    pub negative_followup: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_turns: 3,
            satisfied_threshold: 6,
            positive_close: "That answers my question, thank you.".into(),
            negative_followup: "That doesn't look right. Please check the answer and try again."
                .into(),
        }
    }
}

/// Drives feedback sessions against a responder (usually a memory system's
/// answer function). Holds the calibrated action models and, for the LLM
/// path, the gateway handles for the simulator and judge models.
pub struct SessionSimulator {
    gateway: Arc<Gateway>,
    router: SimulationRouter,
    profiles: ProfileRegistry,
    sigmoid: SigmoidActionModel,
    binary: BinaryActionModel,
    config: SessionConfig,
}

impl SessionSimulator {
    pub fn new(gateway: Arc<Gateway>, router: SimulationRouter) -> Result<Self, CalibrationError> {
        let dist = action::defaults::score_distribution();
        let targets = action::defaults::targets();
        let sigmoid = calibrate_sigmoid(&dist, targets, SigmoidShape::default())?;
        let binary = calibrate_binary(
            &dist,
            targets,
            action::binary_satisfaction(true),
            action::binary_satisfaction(false),
        )?;
        Ok(Self {
            gateway,
            router,
            profiles: ProfileRegistry::default(),
            sigmoid,
            binary,
            config: SessionConfig::default(),
        })
    }

    pub fn with_profiles(mut self, profiles: ProfileRegistry) -> Self {
        self.profiles = profiles;
        self
    }

    pub fn with_config(mut self, config: SessionConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Runs one full session for `case`. `respond` is called once per
    /// assistant turn with the dialog so far and returns the system's answer.
    ///
    /// Failure semantics: a responder failure always fails the session. A
    /// scoring failure fails the session only when no turn has been scored
    /// yet; otherwise the unscored assistant turn is dropped and the session
    /// is kept with an `Error` termination so downstream consumers can log it
    /// without ingesting it. A simulator failure after scoring likewise keeps
    /// the scored turns under an `Error` termination.
    pub fn simulate_session<R, F>(
        &self,
        case: &TaskCase,
        rng: &mut R,
        mut respond: F,
    ) -> Result<FeedbackSession, SimulatorError>
    where
        R: Rng + ?Sized,
        F: FnMut(&[DialogTurn]) -> Result<String, MemoryError>,
    {
        let path = self.router.route(case)?;
        let mut session = FeedbackSession {
            case_id: case.case_id.clone(),
            dataset: case.dataset.clone(),
            turns: vec![DialogTurn::user(case.query.clone(), 0)],
            satisfaction: Vec::new(),
            actions: Vec::new(),
            terminated_by: TerminationReason::TurnLimit,
        };
        let evaluation_context = render_evaluation_context(case);

        for turn in 1..=self.config.max_turns {
            let reply = respond(&session.turns)?;
            let ordinal = session.turns.len() as u64;
            session.turns.push(DialogTurn::assistant(reply, ordinal));

            let score = match self.score_turn(case, path, &session.turns, &evaluation_context) {
                Ok(score) => score,
                Err(err) if turn == 1 => return Err(err),
                Err(_) => {
                    session.turns.pop();
                    session.terminated_by = TerminationReason::Error;
                    break;
                }
            };
            session.satisfaction.push(score);

            let probs = match path {
                SimulationPath::MetricDirect(MetricKind::Accuracy) => {
                    self.binary.probabilities(score, case.format)
                }
                _ => self.sigmoid.probabilities(score, case.format),
            };
            session.actions.push(sample_action(&probs, rng));

            if turn == self.config.max_turns {
                session.terminated_by = TerminationReason::TurnLimit;
                break;
            }

            match path {
                SimulationPath::MetricDirect(_) => {
                    let ordinal = session.turns.len() as u64;
                    if score.get() >= self.config.satisfied_threshold {
                        session.turns.push(DialogTurn::user(
                            self.config.positive_close.clone(),
                            ordinal,
                        ));
                        session.terminated_by = TerminationReason::SimulatorEnd;
                        break;
                    }
                    session.turns.push(DialogTurn::user(
                        self.config.negative_followup.clone(),
                        ordinal,
                    ));
                }
                SimulationPath::LlmSimulated => {
                    let profile = self.profiles.profile_for(&case.dataset);
                    let prompt = build_test_prompt(
                        profile,
                        &session.turns,
                        &evaluation_context,
                        &case.language,
                    );
                    let messages = vec![
                        ChatMessage::system(build_profile_prompt(profile)),
                        ChatMessage::user(prompt),
                    ];
                    match chat_with_reparse(
                        &self.gateway,
                        GatewayRole::Simulator,
                        messages,
                        REINSTRUCTION,
                        parse_verdict,
                    ) {
                        Ok(verdict) => match verdict.behavior {
                            Behavior::EndConversation => {
                                session.terminated_by = TerminationReason::SimulatorEnd;
                                break;
                            }
                            Behavior::ContinueConversation => {
                                let ordinal = session.turns.len() as u64;
                                let text = verdict.response.expect("continue carries a response");
                                session.turns.push(DialogTurn::user(text, ordinal));
                            }
                        },
                        Err(_) => {
                            session.terminated_by = TerminationReason::Error;
                            break;
                        }
                    }
                }
            }
        }

        debug_assert!(session.validate().is_ok(), "{:?}", session.validate());
        Ok(session)
    }

    fn score_turn(
        &self,
        case: &TaskCase,
        path: SimulationPath,
        turns: &[DialogTurn],
        evaluation_context: &str,
    ) -> Result<SatisfactionScore, SimulatorError> {
        let reply = &turns.last().expect("scored after a push").content;
        match path {
            SimulationPath::MetricDirect(metric) => {
                let gold = case
                    .eval
                    .gold
                    .as_deref()
                    .ok_or_else(|| SimulatorError::MissingGold(case.case_id.clone()))?;
                Ok(match metric {
                    MetricKind::Accuracy => action::binary_satisfaction(exact_match(reply, gold)),
                    _ => action::f1_to_satisfaction(token_f1(reply, gold)),
                })
            }
            SimulationPath::LlmSimulated => {
                score_satisfaction(&self.gateway, turns, evaluation_context)
            }
        }
    }
}

/// Asks the judge model to grade the latest assistant turn on the ten-point
/// scale. Retries once with a re-instruction if the reply has no usable score.
pub fn score_satisfaction(
    gateway: &Gateway,
    turns: &[DialogTurn],
    evaluation_context: &str,
) -> Result<SatisfactionScore, SimulatorError> {
    let (system, user) = satisfaction_prompts(turns, evaluation_context);
    let messages = vec![ChatMessage::system(system), ChatMessage::user(user)];
    chat_with_reparse(
        gateway,
        GatewayRole::Judge,
        messages,
        SCORE_REINSTRUCTION,
        parse_score,
    )
}

/// One chat round plus a single re-instructed retry when the reply doesn't
/// parse. Gateway failures map per role; a second parse failure is final.
fn chat_with_reparse<T>(
    gateway: &Gateway,
    role: GatewayRole,
    mut messages: Vec<ChatMessage>,
    reinstruction: &str,
    parse: impl Fn(&str) -> Result<T, SimulatorError>,
) -> Result<T, SimulatorError> {
    let unavailable = |e| match role {
        GatewayRole::Judge => SimulatorError::JudgeUnavailable(e),
        _ => SimulatorError::SimulatorUnavailable(e),
    };
    let reply = gateway
        .chat(role, &ChatRequest::new(messages.clone()))
        .map_err(unavailable)?;
    match parse(&reply) {
        Ok(v) => Ok(v),
        Err(_) => {
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(reinstruction));
            let retry = gateway
                .chat(role, &ChatRequest::new(messages))
                .map_err(unavailable)?;
            parse(&retry)
        }
    }
}

/// Parses the simulator's JSON verdict out of a (possibly chatty) reply and
/// normalizes it: an ending verdict drops any response text, a continuing
/// verdict must carry one.
pub fn parse_verdict(raw: &str) -> Result<SimulatorVerdict, SimulatorError> {
    #[derive(serde::Deserialize)]
    struct Loose {
        #[serde(default)]
        reasoning: String,
        behavior: String,
        #[serde(default)]
        response: Option<String>,
    }

    let json = extract_first_json_object(raw)
        .ok_or_else(|| SimulatorError::MalformedVerdict(excerpt(raw)))?;
    let loose: Loose =
        serde_json::from_str(json).map_err(|e| SimulatorError::MalformedVerdict(e.to_string()))?;
    let behavior = match loose.behavior.as_str() {
        "continue_conversation" => Behavior::ContinueConversation,
        "end_conversation" => Behavior::EndConversation,
        other => return Err(SimulatorError::InvalidBehavior(other.to_string())),
    };
    let response = match behavior {
        Behavior::EndConversation => None,
        Behavior::ContinueConversation => match loose.response {
            Some(text) if !text.trim().is_empty() => Some(text),
            _ => return Err(SimulatorError::MissingResponse),
        },
    };
    Ok(SimulatorVerdict {
        reasoning: loose.reasoning,
        behavior,
        response,
    })
}

fn parse_score(raw: &str) -> Result<SatisfactionScore, SimulatorError> {
    #[derive(serde::Deserialize)]
    struct Scored {
        score: i64,
    }

    let value = extract_first_json_object(raw)
        .and_then(|json| serde_json::from_str::<Scored>(json).ok())
        .map(|s| s.score)
        .or_else(|| raw.trim().parse::<i64>().ok())
        .or_else(|| integer_after_keyword(raw, "score"))
        .or_else(|| first_integer(raw))
        .ok_or_else(|| SimulatorError::UnparseableScore(excerpt(raw)))?;
    u8::try_from(value)
        .ok()
        .and_then(|v| SatisfactionScore::new(v).ok())
        .ok_or_else(|| SimulatorError::UnparseableScore(format!("{value} outside 1..=10")))
}

fn integer_after_keyword(text: &str, keyword: &str) -> Option<i64> {
    let lower = text.to_lowercase();
    let at = lower.find(keyword)?;
    first_integer(&text[at + keyword.len()..])
}

fn first_integer(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if let Ok(v) = text[start..i].parse() {
                return Some(v);
            }
        } else {
            i += 1;
        }
    }
    None
}

fn excerpt(raw: &str) -> String {
    let trimmed = raw.trim();
    if trimmed.chars().count() <= 120 {
        trimmed.to_string()
    } else {
        let cut: String = trimmed.chars().take(120).collect();
        format!("{cut}...")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::gateway::{GatewayError, MockReply, MockRule, MockScript};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arc_mock(script: MockScript) -> Arc<Gateway> {
        Arc::new(Gateway::mock(script))
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn simulator(gateway: Arc<Gateway>, cases: &crate::tasks::CaseSet) -> SessionSimulator {
        let router = SimulationRouter::from_cases(cases);
        SessionSimulator::new(gateway, router).unwrap()
    }

    #[test]
    fn verdict_parsing_normalizes_and_rejects() {
        let ok = parse_verdict(
            r#"Sure! {"reasoning": "fine", "behavior": "continue_conversation", "response": "go on"}"#,
        )
        .unwrap();
        assert_eq!(ok.behavior, Behavior::ContinueConversation);
        assert_eq!(ok.response.as_deref(), Some("go on"));

        let ended = parse_verdict(
            r#"{"reasoning": "done", "behavior": "end_conversation", "response": "bye"}"#,
        )
        .unwrap();
        assert_eq!(ended.behavior, Behavior::EndConversation);
        assert_eq!(ended.response, None);

        assert!(matches!(
            parse_verdict(
                r#"{"reasoning": "", "behavior": "continue_conversation", "response": null}"#
            ),
            Err(SimulatorError::MissingResponse)
        ));
        assert!(matches!(
            parse_verdict(r#"{"reasoning": "", "behavior": "stop", "response": null}"#),
            Err(SimulatorError::InvalidBehavior(b)) if b == "stop"
        ));
        assert!(matches!(
            parse_verdict("no json here"),
            Err(SimulatorError::MalformedVerdict(_))
        ));
    }

    #[test]
    fn score_parsing_accepts_common_shapes() {
        for (raw, want) in [
            (r#"{"score": 7}"#, 7),
            ("8", 8),
            ("Score: 6", 6),
            ("I'd rate this 9/10.", 9),
            (r#"prose first {"score": 3} prose after"#, 3),
        ] {
            assert_eq!(parse_score(raw).unwrap().get(), want, "raw={raw}");
        }
        assert!(matches!(
            parse_score("no digits at all"),
            Err(SimulatorError::UnparseableScore(_))
        ));
        assert!(matches!(
            parse_score(r#"{"score": 40}"#),
            Err(SimulatorError::UnparseableScore(_))
        ));
    }

    #[test]
    fn metric_path_ends_on_satisfied_answer_without_model_calls() {
        let cases = fixtures::case_set(vec![fixtures::f1_case("c1", "qa")]);
        let gateway = arc_mock(MockScript::new());
        let sim = simulator(Arc::clone(&gateway), &cases);
        let case = cases.get("c1").unwrap();
        let gold = case.eval.gold.clone().unwrap();

        let session = sim
            .simulate_session(case, &mut rng(), |_| Ok(gold.clone()))
            .unwrap();

        assert_eq!(session.terminated_by, TerminationReason::SimulatorEnd);
        assert_eq!(session.satisfaction.len(), 1);
        assert_eq!(session.satisfaction[0].get(), 10);
        assert_eq!(session.turns.len(), 3);
        assert_eq!(
            session.turns[2].content,
            SessionConfig::default().positive_close
        );
        assert_eq!(gateway.calls(GatewayRole::Simulator), 0);
        assert_eq!(gateway.calls(GatewayRole::Judge), 0);
    }

    #[test]
    fn metric_path_retries_until_turn_limit() {
        let cases = fixtures::case_set(vec![fixtures::f1_case("c1", "qa")]);
        let sim = simulator(arc_mock(MockScript::new()), &cases);
        let case = cases.get("c1").unwrap();

        let mut seen = Vec::new();
        let session = sim
            .simulate_session(case, &mut rng(), |turns| {
                seen.push(turns.len());
                Ok("completely unrelated words".to_string())
            })
            .unwrap();

        assert_eq!(session.terminated_by, TerminationReason::TurnLimit);
        assert_eq!(
            session
                .satisfaction
                .iter()
                .map(|s| s.get())
                .collect::<Vec<_>>(),
            [1, 1, 1]
        );
        // query, then query+answer+followup, then five turns
        assert_eq!(seen, vec![1, 3, 5]);
        assert_eq!(session.turns.len(), 6);
        assert_eq!(
            session.turns[2].content,
            SessionConfig::default().negative_followup
        );
        assert!(session.validate().is_ok());
    }

    #[test]
    fn metric_path_recovers_mid_session() {
        let cases = fixtures::case_set(vec![fixtures::f1_case("c1", "qa")]);
        let sim = simulator(arc_mock(MockScript::new()), &cases);
        let case = cases.get("c1").unwrap();
        let gold = case.eval.gold.clone().unwrap();

        let mut calls = 0;
        let session = sim
            .simulate_session(case, &mut rng(), |_| {
                calls += 1;
                Ok(if calls == 1 {
                    "wrong".to_string()
                } else {
                    gold.clone()
                })
            })
            .unwrap();

        assert_eq!(session.terminated_by, TerminationReason::SimulatorEnd);
        let grades: Vec<u8> = session.satisfaction.iter().map(|s| s.get()).collect();
        assert_eq!(grades[0], 1);
        assert_eq!(grades[1], 10);
    }

    #[test]
    fn accuracy_path_grades_binary() {
        let cases = fixtures::case_set(vec![fixtures::accuracy_case("c1", "mc")]);
        let sim = simulator(arc_mock(MockScript::new()), &cases);
        let case = cases.get("c1").unwrap();
        let gold = case.eval.gold.clone().unwrap();

        let right = sim
            .simulate_session(case, &mut rng(), |_| Ok(gold.clone()))
            .unwrap();
        assert_eq!(right.satisfaction[0].get(), 9);
        assert_eq!(right.terminated_by, TerminationReason::SimulatorEnd);

        let wrong = sim
            .simulate_session(case, &mut rng(), |_| Ok("something else".to_string()))
            .unwrap();
        assert_eq!(wrong.satisfaction[0].get(), 3);
        assert_eq!(wrong.terminated_by, TerminationReason::TurnLimit);
    }

    #[test]
    fn metric_path_requires_gold() {
        let mut case = fixtures::f1_case("c1", "qa");
        case.eval.gold = None;
        let mut router = SimulationRouter::new();
        router.register("qa", SimulationPath::MetricDirect(MetricKind::F1));
        let sim = SessionSimulator::new(arc_mock(MockScript::new()), router).unwrap();
        assert!(matches!(
            sim.simulate_session(&case, &mut rng(), |_| Ok("x".to_string())),
            Err(SimulatorError::MissingGold(id)) if id == "c1"
        ));
    }

    #[test]
    fn llm_path_follows_simulator_verdicts() {
        let cases = fixtures::case_set(vec![fixtures::judge_case("c1", "essays")]);
        let script = MockScript::new()
            .expect(MockRule::role(GatewayRole::Judge, "FULL CONVERSATION").reply(r#"{"score": 4}"#))
            .expect(MockRule::role(GatewayRole::Simulator, "predict the user's response").reply(
                r#"{"reasoning": "shallow", "behavior": "continue_conversation", "response": "Add more depth please."}"#,
            ))
            .expect(MockRule::role(GatewayRole::Judge, "Add more depth please.").reply(r#"{"score": 9}"#))
            .expect(MockRule::role(GatewayRole::Simulator, "Add more depth please.").reply(
                r#"{"reasoning": "good now", "behavior": "end_conversation", "response": null}"#,
            ));
        let gateway = arc_mock(script);
        let sim = simulator(Arc::clone(&gateway), &cases);
        let case = cases.get("c1").unwrap();

        let mut calls = 0;
        let session = sim
            .simulate_session(case, &mut rng(), |_| {
                calls += 1;
                Ok(format!("draft number {calls}"))
            })
            .unwrap();

        assert_eq!(session.terminated_by, TerminationReason::SimulatorEnd);
        assert_eq!(
            session
                .satisfaction
                .iter()
                .map(|s| s.get())
                .collect::<Vec<_>>(),
            [4, 9]
        );
        assert_eq!(session.turns.len(), 4);
        assert_eq!(session.turns[2].content, "Add more depth please.");
        assert_eq!(gateway.calls(GatewayRole::Judge), 2);
        assert_eq!(gateway.calls(GatewayRole::Simulator), 2);
    }

    #[test]
    fn llm_path_skips_verdict_on_final_turn() {
        let cases = fixtures::case_set(vec![fixtures::judge_case("c1", "essays")]);
        let script =
            MockScript::new().role_default(GatewayRole::Judge, MockReply::fixed(r#"{"score": 5}"#));
        let gateway = arc_mock(script);
        let sim = simulator(Arc::clone(&gateway), &cases).with_config(SessionConfig {
            max_turns: 1,
            ..SessionConfig::default()
        });
        let case = cases.get("c1").unwrap();

        let session = sim
            .simulate_session(case, &mut rng(), |_| Ok("draft".to_string()))
            .unwrap();
        assert_eq!(session.terminated_by, TerminationReason::TurnLimit);
        assert_eq!(gateway.calls(GatewayRole::Simulator), 0);
        assert_eq!(gateway.calls(GatewayRole::Judge), 1);
    }

    #[test]
    fn malformed_verdict_is_retried_with_reinstruction() {
        let cases = fixtures::case_set(vec![fixtures::judge_case("c1", "essays")]);
        let script = MockScript::new()
            .expect(
                MockRule::role(GatewayRole::Judge, "FULL CONVERSATION").reply(r#"{"score": 5}"#),
            )
            .expect(
                MockRule::role(GatewayRole::Simulator, "predict the user's response")
                    .reply("not json at all"),
            )
            .expect(
                MockRule::role(GatewayRole::Simulator, "Your previous reply was not valid").reply(
                    r#"{"reasoning": "ok", "behavior": "end_conversation", "response": null}"#,
                ),
            );
        let gateway = arc_mock(script);
        let sim = simulator(Arc::clone(&gateway), &cases);
        let case = cases.get("c1").unwrap();

        let session = sim
            .simulate_session(case, &mut rng(), |_| Ok("draft".to_string()))
            .unwrap();
        assert_eq!(session.terminated_by, TerminationReason::SimulatorEnd);
        assert_eq!(gateway.calls(GatewayRole::Simulator), 2);
    }

    #[test]
    fn persistent_verdict_failure_keeps_scored_turns_as_error() {
        let cases = fixtures::case_set(vec![fixtures::judge_case("c1", "essays")]);
        let script = MockScript::new()
            .role_default(GatewayRole::Judge, MockReply::fixed(r#"{"score": 8}"#))
            .role_default(GatewayRole::Simulator, MockReply::fixed("still not json"));
        let gateway = arc_mock(script);
        let sim = simulator(Arc::clone(&gateway), &cases);
        let case = cases.get("c1").unwrap();

        let session = sim
            .simulate_session(case, &mut rng(), |_| Ok("draft".to_string()))
            .unwrap();
        assert_eq!(session.terminated_by, TerminationReason::Error);
        assert_eq!(session.satisfaction.len(), 1);
        assert_eq!(session.turns.len(), 2);
        assert!(session.validate().is_ok());
    }

    #[test]
    fn judge_failure_on_first_turn_fails_the_session() {
        let cases = fixtures::case_set(vec![fixtures::judge_case("c1", "essays")]);
        let script = MockScript::new()
            .expect(MockRule::role(GatewayRole::Judge, "").fail_transient())
            .expect(MockRule::role(GatewayRole::Judge, "").fail_transient())
            .expect(MockRule::role(GatewayRole::Judge, "").fail_transient());
        let sim = simulator(arc_mock(script), &cases);
        let case = cases.get("c1").unwrap();

        let err = sim
            .simulate_session(case, &mut rng(), |_| Ok("draft".to_string()))
            .unwrap_err();
        assert!(matches!(
            err,
            SimulatorError::JudgeUnavailable(GatewayError::Exhausted { attempts: 3, .. })
        ));
    }

    #[test]
    fn judge_failure_later_truncates_the_unscored_turn() {
        let cases = fixtures::case_set(vec![fixtures::judge_case("c1", "essays")]);
        let script = MockScript::new()
            .expect(MockRule::role(GatewayRole::Judge, "").reply(r#"{"score": 4}"#))
            .expect(MockRule::role(GatewayRole::Simulator, "").reply(
                r#"{"reasoning": "", "behavior": "continue_conversation", "response": "try again"}"#,
            ))
            .expect(MockRule::role(GatewayRole::Judge, "").fail_transient())
            .expect(MockRule::role(GatewayRole::Judge, "").fail_transient())
            .expect(MockRule::role(GatewayRole::Judge, "").fail_transient());
        let sim = simulator(arc_mock(script), &cases);
        let case = cases.get("c1").unwrap();

        let session = sim
            .simulate_session(case, &mut rng(), |_| Ok("draft".to_string()))
            .unwrap();
        assert_eq!(session.terminated_by, TerminationReason::Error);
        assert_eq!(session.satisfaction.len(), 1);
        assert_eq!(session.turns.last().unwrap().content, "try again");
        assert!(session.validate().is_ok());
    }

    #[test]
    fn responder_failure_propagates() {
        let cases = fixtures::case_set(vec![fixtures::f1_case("c1", "qa")]);
        let sim = simulator(arc_mock(MockScript::new()), &cases);
        let case = cases.get("c1").unwrap();
        let err = sim
            .simulate_session(case, &mut rng(), |_| {
                Err(MemoryError::BudgetUnsatisfiable {
                    needed: 10,
                    budget: 1,
                })
            })
            .unwrap_err();
        assert!(matches!(err, SimulatorError::SystemFailure(_)));
    }

    #[test]
    fn unsatisfied_score_reinstruction_retries_once() {
        let script = MockScript::new()
            .expect(
                MockRule::role(GatewayRole::Judge, "FULL CONVERSATION").reply("hmm, hard to say"),
            )
            .expect(
                MockRule::role(GatewayRole::Judge, "Your previous reply was not usable")
                    .reply(r#"{"score": 7}"#),
            );
        let gateway = Gateway::mock(script);
        let turns = vec![DialogTurn::user("q", 0), DialogTurn::assistant("a", 1)];
        let score = score_satisfaction(&gateway, &turns, "ctx").unwrap();
        assert_eq!(score.get(), 7);
        assert_eq!(gateway.calls(GatewayRole::Judge), 2);

        let script =
            MockScript::new().role_default(GatewayRole::Judge, MockReply::fixed("no usable reply"));
        let gateway = Gateway::mock(script);
        assert!(matches!(
            score_satisfaction(&gateway, &turns, "ctx"),
            Err(SimulatorError::UnparseableScore(_))
        ));
    }

    #[test]
    fn same_seed_reproduces_the_session() {
        let cases = fixtures::case_set(vec![fixtures::f1_case("c1", "qa")]);
        let sim = simulator(arc_mock(MockScript::new()), &cases);
        let case = cases.get("c1").unwrap();

        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sim.simulate_session(case, &mut rng, |_| Ok("partially right answer".to_string()))
                .unwrap()
        };
        assert_eq!(run(11), run(11));
    }
}
