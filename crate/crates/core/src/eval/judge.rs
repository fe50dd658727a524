//! Rubric-driven judge scoring for tasks whose quality can't be reduced to a
//! string metric. A rubric is a prompt template with `{SLOT}` placeholders;
//! slots are filled from the case (query, gold, precomputed metric values)
//! and the system's response, and the judge model returns one integer.

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayRole};
use crate::tasks::TaskCase;

use super::metrics::rouge_l;
use super::EvalError;

/// Grade range rubric judges must answer within.
pub const RUBRIC_MIN: u8 = 1;
pub const RUBRIC_MAX: u8 = 10;

const RETRY_NOTE: &str = "Respond with a single integer from 1 to 10.";

const LEGAL_JUDGMENT: &str = "\
You are an expert legal AI assistant. Your task is to evaluate the quality of an automatically generated legal judgment document based on the provided context and a set of pre-calculated metrics.\n\
\n\
## Case Factual Description (Input)\n\
\n\
{INPUT_FACTS}\n\
\n\
## Generated Judgment Document (Output)\n\
\n\
{GENERATED_JUDGMENT}\n\
\n\
## Ground Truth Judgment Document (Reference)\n\
\n\
{GOLDEN_JUDGMENT}\n\
\n\
## Evaluation Metrics\n\
\n\
Below are the calculated metrics comparing the 'Generated Judgment' to the 'Ground Truth'. A score of 1.00 indicates a perfect match for that specific metric, while 0.00 indicates a complete mismatch.\n\
\n\
1. Penalty Accuracy (Scores range from 0.00 to 1.00)\n\
\n\
time_score: {time_score} (Measures the accuracy of the prison sentence duration.)\n\
\n\
amount_score: {amount_score} (Measures the accuracy of the monetary fine amount.)\n\
\n\
2. Convicting Accuracy (Scores range from 0.00 to 1.00)\n\
\n\
crime_recall: {crime_recall} (The proportion of actual charges that the system correctly identifies.)\n\
\n\
crime_precision: {crime_precision} (The proportion of predicted charges that are accurate.)\n\
\n\
3. Referencing Accuracy (Scores range from 0.00 to 1.00)\n\
\n\
penalcode_index_recall: {penalcode_index_recall} (The proportion of correctly cited ground-truth statutes among all relevant statutes.)\n\
\n\
penalcode_index_precision: {penalcode_index_precision} (The proportion of correctly cited statutes among all citations in the generated judgment.)\n\
\n\
reasoning_meteor: {reasoning_meteor} (Semantic similarity of the 'Judicial Reasoning' section based on METEOR score.)\n\
\n\
reasoning_bert_score: {reasoning_bert_score} (Semantic similarity of the 'Judicial Reasoning' section based on BERTScore.)\n\
\n\
judge_meteor: {judge_meteor} (Semantic similarity of the 'Judgment Result' section based on METEOR score.)\n\
\n\
judge_bert_score: {judge_bert_score} (Semantic similarity of the 'Judgment Result' section based on BERTScore.)\n\
\n\
## Task\n\
\n\
Based on a holistic review of the input, output, ground truth, and all the metrics provided above, provide a single integer score from 1 to 10 to represent the overall quality of the generated judgment document.\n\
\n\
- 1: Represents extremely poor quality (e.g., completely irrelevant, factually incorrect, nonsensical).\n\
\n\
- 10: Represents excellent quality (e.g., legally sound, factually accurate, well-reasoned, and structurally perfect, nearly indistinguishable from the ground truth).Your response should be only a single integer.\n\
\n\
## Final Score";

const RESEARCH_IDEA: &str = "\
You are an expert scientific researcher and AI assistant. Your task is to evaluate the overall quality of an automatically generated research idea based on the provided context and a set of pre-calculated metrics.\n\
\n\
## Background Knowledge (Input)\n\
\n\
{INPUT_CONTEXT}\n\
\n\
## Generated Research Idea (Output)\n\
\n\
{GENERATED_IDEA}\n\
\n\
## Ground Truth Research Idea (Reference)\n\
\n\
{GOLDEN_IDEA}\n\
\n\
## Evaluation Metrics\n\
\n\
Below are the calculated metrics comparing the 'Generated Research Idea' to the 'Ground Truth'. Please use them to inform your overall score.\n\
\n\
1. Semantic Similarity (bert_score): Measures the semantic similarity between the 'Generated Research Idea' and the 'Ground Truth Research Idea'. Scores range from 0.00 (no similarity) to 1.00 (perfect semantic match).\n\
\n\
bert_score: {bert_score}\n\
\n\
2. Idea Overlap (llm_rating_score): An LLM-based rating of the idea overlap between the 'Generated Research Idea' and the 'Ground Truth'. Scores range from 1 (minimal overlap) to 10 (perfect overlap).\n\
\n\
llm_rating_score: {llm_rating_score}\n\
\n\
3. Novelty Insight Score (llm_novelty_ranking_score): Quantifies the novelty of the 'Generated Research Idea' relative to the 'Ground Truth'. This score is derived by ranking the generated idea(s) against the ground truth idea. Scores range from 0.00 to 1.00.\n\
\n\
    * A score near **0.00** means the generated idea is significantly less novel than the ground truth.\n\
\n\
    * A score near **0.50** suggests comparable novelty.\n\
\n\
    * A score near **1.00** means the generated idea is significantly more novel than the ground truth.\n\
\n\
llm_novelty_ranking_score: {llm_novelty_ranking_score}\n\
\n\
4. Feasibility Insight Score (llm_feasibility_ranking_score): Quantifies the feasibility of the 'Generated Research Idea' relative to the 'Ground Truth', using the same ranking methodology as the Novelty Insight Score. Scores range from 0.00 to 1.00.\n\
\n\
    * A score near **0.00** means the generated idea is significantly less feasible than the ground truth.\n\
\n\
    * A score near **0.50** suggests comparable feasibility.\n\
\n\
    * A score near **1.00** means the generated idea is significantly more feasible than the ground truth.\n\
\n\
llm_feasibility_ranking_score: {llm_feasibility_ranking_score}\n\
\n\
## Task\n\
\n\
Based on a holistic review of the input, output, ground truth, and all the metrics provided above, provide a single integer score from 1 to 10 to represent the overall quality of the generated research idea.\n\
\n\
- 1: Represents extremely poor quality (e.g., incoherent, irrelevant, factually incorrect).\n\
\n\
- 10: Represents excellent quality (e.g., coherent, insightful, novel, feasible, and well-aligned with the background knowledge, nearly indistinguishable from an idea proposed by a human expert).\n\
\n\
Your response should be only a single integer.\n\
\n\
## Final Score";

const SCIENCE_NEWS: &str = "\
You are an expert in science communication and text evaluation. Your task is to evaluate the quality of an automatically generated popular science article based on the provided source document, a reference article, and a set of pre-calculated metrics.\n\
\n\
## Source Document (Input)\n\
\n\
{INPUT_TEXT}\n\
\n\
## Generated Popular Science Article (Output)\n\
\n\
{GENERATED_ARTICLE}\n\
\n\
## Abstract of Reference Popular Science Article (Golden Passage)\n\
\n\
{GOLDEN_PASSAGE}\n\
\n\
## Evaluation Metrics\n\
\n\
Below are the calculated metrics comparing the 'Generated Article' to the 'Reference Article' or analyzing its intrinsic qualities.\n\
\n\
Rouge-L (Score range: 0.00 to 1.00)\n\
\n\
Score: {ROUGE_L}\n\
\n\
Meaning: Measures the overlap of the longest common word sequence between the generated and reference articles. A higher score indicates better factual consistency and content preservation.\n\
\n\
BERTScore-F1 (Score range: 0.00 to 1.00)\n\
\n\
Score: {BERTSCORE_F1}\n\
\n\
Meaning: Measures the semantic similarity between the generated and reference articles using contextual language models. A higher score indicates that the core meaning is better captured, even with different wording.\n\
\n\
CLI (Coleman-Liau Index)\n\
\n\
Score: {CLI}\n\
\n\
Meaning: Estimates the U.S. grade level required to understand the text. For popular science, a lower score (e.g., 8-12) is generally desirable, indicating better readability and accessibility for a general audience.\n\
\n\
FKGL (Flesch-Kincaid Grade Level)\n\
\n\
Score: {FKGL}\n\
\n\
Meaning: Similar to CLI, this metric also estimates the required U.S. grade level for comprehension. Lower scores suggest the text is easier to read. A score between 8 and 12 means standard readability for a general audience.\n\
\n\
DCRS (Dale-Chall Readability Score)\n\
\n\
Score: {DCRS}\n\
\n\
Meaning: Estimates readability based on a list of 3000 common words. A lower score indicates the text is easier to understand. A score of 4.9 or lower indicates that the passage is very easy to read for fourth-grade students. A score between 9.0 and 9.9 indicates that the passage is at a college readability level.\n\
\n\
## Task\n\
\n\
Based on a holistic review of the input, output, golden passage, and all the metrics provided above, provide a single integer score from 1 to 10 to represent the overall quality of the generated popular science article. Consider its accuracy, readability, coherence, and faithfulness to the source material.\n\
\n\
- 1: Represents extremely poor quality (e.g., completely irrelevant, factually incorrect, nonsensical, or unreadable).\n\
\n\
- 10: Represents excellent quality (e.g., accurate, easy to understand for a layperson, well-structured, engaging, and highly faithful to the source, nearly indistinguishable from the reference).\n\
\n\
Your response should be only a single integer.\n\
\n\
## Final Score";

/// Registered rubric templates by id.
pub fn rubric_template(id: &str) -> Option<&'static str> {
    match id {
        "legal_judgment" => Some(LEGAL_JUDGMENT),
        "research_idea" => Some(RESEARCH_IDEA),
        "science_news" => Some(SCIENCE_NEWS),
        _ => None,
    }
}

pub const RUBRIC_IDS: [&str; 3] = ["legal_judgment", "research_idea", "science_news"];

fn render_slot_value(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}

/// Replaces every `{SLOT}` placeholder via `resolve`. Unresolvable slots are
/// an error; braces not wrapping a slot-shaped name pass through literally.
pub fn fill_template(
    template: &str,
    resolve: impl Fn(&str) -> Option<String>,
) -> Result<String, EvalError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        match tail.find('}') {
            Some(close) if is_slot_name(&tail[..close]) => {
                let name = &tail[..close];
                let value =
                    resolve(name).ok_or_else(|| EvalError::MissingSlot(name.to_string()))?;
                out.push_str(&value);
                rest = &tail[close + 1..];
            }
            _ => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Builds the filled rubric prompt for a case/response pair. Slot sources:
/// `INPUT_*` is the query, `GENERATED_*` the response, `GOLDEN_*` the gold
/// reference, `ROUGE_L` is computed against the gold, and anything else must
/// come from the case's precomputed slot values.
pub fn build_rubric_prompt(case: &TaskCase, response: &str) -> Result<String, EvalError> {
    let id = case
        .eval
        .judge_template
        .as_deref()
        .ok_or_else(|| EvalError::UnknownTemplate("<none>".into()))?;
    let template = rubric_template(id).ok_or_else(|| EvalError::UnknownTemplate(id.to_string()))?;
    let gold = case.eval.gold.as_deref();
    fill_template(template, |slot| {
        if let Some(value) = case.eval.slots.get(slot) {
            return Some(render_slot_value(value));
        }
        if slot.starts_with("INPUT_") {
            return Some(case.query.clone());
        }
        if slot.starts_with("GENERATED_") {
            return Some(response.to_string());
        }
        if slot.starts_with("GOLDEN_") {
            return gold.map(str::to_string);
        }
        if slot == "ROUGE_L" {
            return gold.map(|g| format!("{:.2}", rouge_l(response, g)));
        }
        None
    })
}

/// Scores a response against its case's rubric: fill the template, ask the
/// judge model, take the first integer in range. One re-instructed retry.
pub fn judge_rubric_score(
    gateway: &Gateway,
    case: &TaskCase,
    response: &str,
) -> Result<u8, EvalError> {
    let prompt = build_rubric_prompt(case, response)?;
    let mut messages = vec![ChatMessage::user(prompt)];
    let reply = gateway.chat(GatewayRole::Judge, &ChatRequest::new(messages.clone()))?;
    match parse_grade(&reply) {
        Some(grade) => Ok(grade),
        None => {
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(RETRY_NOTE));
            let retry = gateway.chat(GatewayRole::Judge, &ChatRequest::new(messages))?;
            parse_grade(&retry).ok_or(EvalError::UnparseableScore(retry))
        }
    }
}

fn parse_grade(raw: &str) -> Option<u8> {
    let digits: String = raw
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(char::is_ascii_digit)
        .collect();
    let value: u8 = digits.parse().ok()?;
    (RUBRIC_MIN..=RUBRIC_MAX).contains(&value).then_some(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::gateway::{GatewayRole, MockReply, MockRule, MockScript};

    #[test]
    fn every_registered_rubric_asks_for_one_integer() {
        for id in RUBRIC_IDS {
            let t = rubric_template(id).unwrap();
            assert!(
                t.contains("Your response should be only a single integer."),
                "{id}"
            );
            assert!(t.ends_with("## Final Score"), "{id}");
        }
        assert!(rubric_template("unknown").is_none());
    }

    #[test]
    fn template_filling_covers_all_slot_sources() {
        let case = fixtures::judge_case("c1", "news");
        let prompt = build_rubric_prompt(&case, "Generated article body.").unwrap();
        assert!(prompt.contains("Write a news article for general readers"));
        assert!(prompt.contains("Generated article body."));
        assert!(prompt.contains("Researchers announced a new result"));
        assert!(prompt.contains("Score: 0.85")); // BERTSCORE_F1 passthrough
        assert!(prompt.contains("Score: 11.2")); // CLI passthrough
        assert!(!prompt.contains('{'), "unfilled slot in:\n{prompt}");
    }

    #[test]
    fn rouge_slot_is_computed_against_gold() {
        let mut case = fixtures::judge_case("c1", "news");
        let gold = case.eval.gold.clone().unwrap();
        let prompt = build_rubric_prompt(&case, &gold).unwrap();
        assert!(prompt.contains("Score: 1.00"), "{prompt}");

        case.eval.gold = None;
        assert!(matches!(
            build_rubric_prompt(&case, "anything"),
            Err(EvalError::MissingSlot(s)) if s == "ROUGE_L" || s.starts_with("GOLDEN_")
        ));
    }

    #[test]
    fn missing_passthrough_slot_is_reported_by_name() {
        let mut case = fixtures::judge_case("c1", "news");
        case.eval.slots.remove("FKGL");
        assert!(matches!(
            build_rubric_prompt(&case, "article"),
            Err(EvalError::MissingSlot(s)) if s == "FKGL"
        ));
    }

    #[test]
    fn unknown_template_is_an_error() {
        let mut case = fixtures::judge_case("c1", "news");
        case.eval.judge_template = Some("haiku".into());
        assert!(matches!(
            build_rubric_prompt(&case, "x"),
            Err(EvalError::UnknownTemplate(t)) if t == "haiku"
        ));
    }

    #[test]
    fn literal_braces_survive_filling() {
        let filled = fill_template("keep {this} but {not-a-slot} and {{", |slot| {
            (slot == "this").then(|| "THAT".to_string())
        })
        .unwrap();
        assert_eq!(filled, "keep THAT but {not-a-slot} and {{");
    }

    #[test]
    fn grade_parsing_and_retry() {
        let case = fixtures::judge_case("c1", "news");
        let gateway = crate::gateway::Gateway::mock(
            MockScript::new()
                .expect(MockRule::role(GatewayRole::Judge, "## Final Score").reply("8")),
        );
        assert_eq!(judge_rubric_score(&gateway, &case, "article").unwrap(), 8);

        let gateway = crate::gateway::Gateway::mock(
            MockScript::new()
                .expect(
                    MockRule::role(GatewayRole::Judge, "## Final Score")
                        .reply("It deserves a high grade."),
                )
                .expect(MockRule::role(GatewayRole::Judge, RETRY_NOTE).reply("Score: 9/10")),
        );
        assert_eq!(judge_rubric_score(&gateway, &case, "article").unwrap(), 9);
        assert_eq!(gateway.calls(GatewayRole::Judge), 2);

        let gateway = crate::gateway::Gateway::mock(
            MockScript::new().role_default(GatewayRole::Judge, MockReply::fixed("0")),
        );
        assert!(matches!(
            judge_rubric_score(&gateway, &case, "article"),
            Err(EvalError::UnparseableScore(_))
        ));
    }

    #[test]
    fn grade_parser_rejects_out_of_range() {
        assert_eq!(parse_grade("7"), Some(7));
        assert_eq!(parse_grade("a 10!"), Some(10));
        assert_eq!(parse_grade("11"), None);
        assert_eq!(parse_grade("0"), None);
        assert_eq!(parse_grade("none"), None);
    }
}
