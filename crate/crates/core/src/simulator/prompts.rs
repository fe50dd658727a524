//! Prompt rendering for the simulator and the satisfaction judge. The
//! template texts are load-bearing: golden-fixture tests pin them byte for
//! byte, so any edit here is a deliberate behavior change.

use crate::tasks::TaskCase;

use super::{DialogTurn, SimulatorProfile, Speaker};

/// System prompt establishing the simulated user's identity and ground rules.
pub fn build_profile_prompt(profile: &SimulatorProfile) -> String {
    let criteria = render_criteria(&profile.persona.evaluation_criteria);
    let mut prompt = format!(
        "{persona}\n\
         \n\
         {expertise}\n\
         \n\
         CRITICAL: Always focus on the initial prompt/request as the primary context for evaluation. The conversation should stay aligned with the original user intent.\n\
         \n\
         IMPORTANT: DO NOT REPEAT QUESTIONS OR REQUESTS that have already been asked in the conversation. Avoid asking the same question multiple times.\n\
         \n\
         IMPORTANT: Always start your reasoning process first, then provide the other feedback elements.\n\
         \n\
         Your response should include:\n\
         1. Reasoning: Detailed analysis of the assistant's response quality and accuracy (always consider how well it addresses the initial prompt)\n\
         2. Behavior decision: Whether to continue or end the conversation\n\
         3. Response: What the user would say (only if continuing the conversation)\n\
         \n\
         Consider factors like:\n\
         {criteria}",
        persona = profile.persona.persona,
        expertise = profile.persona.domain_expertise,
        criteria = criteria,
    );
    if let Some(extra) = &profile.persona.additional_context {
        prompt.push_str("\n\n");
        prompt.push_str(extra);
    }
    prompt
}

/// Per-turn prompt asking the simulator to react to the latest assistant
/// response as the user.
pub fn build_test_prompt(
    profile: &SimulatorProfile,
    history: &[DialogTurn],
    evaluation_context: &str,
    language: &str,
) -> String {
    format!(
        "Analyze this conversation and predict the user's response:\n\
         \n\
         The user is {task}. CRITICAL: Focus on the initial request as the core topic that should be the primary focus throughout this entire conversation. All responses should be evaluated based on how well they address this original user intent.\n\
         \n\
         Conversation History:\n\
         {history}\n\
         \n\
         EVALUATION CONTEXT:\n\
         {context}\n\
         \n\
         IMPORTANT: If you provide a response (when behavior is continue_conversation), it must be in {language}.\n\
         \n\
         Please provide a realistic user response in strict JSON format:\n\
         {{\n\
         \x20\x20\"reasoning\": \"Detailed analysis of the assistant's response quality and accuracy (MUST evaluate how well it addresses the initial request)\",\n\
         \x20\x20\"behavior\": \"continue_conversation\" | \"end_conversation\",\n\
         \x20\x20\"response\": \"What the user would say next (string or null if ending)\"\n\
         }}\n\
         \n\
         Requirements:\n\
         - reasoning: Always provide detailed analysis first. CRITICAL: Always assess how well the assistant's response addresses the initial request and stays focused on the original user intent.\n\
         - behavior: Must be exactly: continue_conversation or end_conversation.\n\
         - response: Text if continuing, null if ending conversation. Must match the conversation language. IMPORTANT: Do not repeat questions or requests that have already been made in the conversation.\n\
         \n\
         Respond with valid JSON only.",
        task = profile.task_description,
        history = render_history(history),
        context = evaluation_context,
        language = language,
    )
}

/// Sent once after a malformed verdict before giving up on the session.
pub const REINSTRUCTION: &str = "Your previous reply was not valid. Respond with valid JSON \
only, using exactly the schema given: {\"reasoning\": string, \"behavior\": \
\"continue_conversation\" | \"end_conversation\", \"response\": string or null}.";

const SATISFACTION_SYSTEM: &str = "\
You are an expert evaluator tasked with scoring assistant responses against specific quality standards.\n\
\n\
SCORING SCALE (1-10):\n\
1-2: Completely inadequate - Wrong, irrelevant, or harmful\n\
3-4: Unsatisfactory - Major errors, misses key points, or unhelpful\n\
5-6: Below expectations - Addresses basics but has significant gaps, inaccuracies, or omissions\n\
7-8: Meets expectations - Solid response with minor issues or missing elements\n\
9-10: Exceeds expectations - Comprehensive, accurate, and fully satisfies all requirements\n\
\n\
EVALUATION APPROACH:\n\
- Use the provided evaluation context and ground truth as your primary standards\n\
- Score against what the response should contain, not just what it does contain\n\
- Consider both correctness and completeness\n\
\n\
Provide only a numerical score from 1-10.";

/// (system, user) prompt pair for the satisfaction judge.
pub fn satisfaction_prompts(history: &[DialogTurn], evaluation_context: &str) -> (String, String) {
    let user = format!(
        "Evaluate the assistant's response by comparing it against the provided standards and ground truth:\n\
         \n\
         FULL CONVERSATION:\n\
         {history}\n\
         \n\
         EVALUATION CONTEXT (contains ground truth and quality criteria):\n\
         {context}\n\
         \n\
         EVALUATION TASK:\n\
         Compare the assistant's final response against the evaluation context above. The evaluation context contains the ground truth and quality standards that define what a good response should include.\n\
         \n\
         Respond in this JSON format:\n\
         {{\n\
         \x20\x20\"score\": <integer from 1-10>\n\
         }}",
        history = render_history(history),
        context = evaluation_context,
    );
    (SATISFACTION_SYSTEM.to_string(), user)
}

/// Dialog turns as `user:`/`assistant:` lines.
pub fn render_history(turns: &[DialogTurn]) -> String {
    let mut out = String::new();
    for (i, t) in turns.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let who = match t.role {
            Speaker::User => "user",
            Speaker::Assistant => "assistant",
        };
        out.push_str(who);
        out.push_str(": ");
        out.push_str(&t.content);
    }
    out
}

fn render_criteria(criteria: &[String]) -> String {
    if criteria.is_empty() {
        return "- Overall quality and helpfulness of the response".to_string();
    }
    criteria
        .iter()
        .map(|c| format!("- {c}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// What the judge and simulator are told about the expected answer: the gold
/// reference when the case has one, plus any grading criteria.
pub fn render_evaluation_context(case: &TaskCase) -> String {
    let mut parts = Vec::new();
    if let Some(gold) = &case.eval.gold {
        if !gold.trim().is_empty() {
            parts.push(format!("Ground truth answer:\n{gold}"));
        }
    }
    if !case.eval.criteria.is_empty() {
        parts.push(format!(
            "Evaluation Criteria:\n{}",
            render_criteria(&case.eval.criteria)
        ));
    }
    if parts.is_empty() {
        parts.push("No ground truth is available; judge the response on intrinsic quality.".into());
    }
    parts.join("\n\n")
}
