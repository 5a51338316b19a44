//! Prompt construction for the five evaluation conditions plus reranking.
//!
//! The schema block and instructions are fixed strings; the trace file format
//! and these templates must stay in lockstep.

use crate::trace::Trace;
use crate::verifier::Label;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    AnswerOnly,
    FullTrace,
    GoldStateAnswer,
    GoldTransAnswer,
    Revise,
    Rerank,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::AnswerOnly,
        Condition::FullTrace,
        Condition::GoldStateAnswer,
        Condition::GoldTransAnswer,
        Condition::Revise,
        Condition::Rerank,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::AnswerOnly => "answer_only",
            Condition::FullTrace => "full_trace",
            Condition::GoldStateAnswer => "gold_state_answer",
            Condition::GoldTransAnswer => "gold_trans_answer",
            Condition::Revise => "revise",
            Condition::Rerank => "rerank",
        }
    }

    pub fn parse(s: &str) -> Option<Condition> {
        Condition::ALL.iter().copied().find(|c| c.as_str() == s)
    }

    /// Greedy conditions decode at temperature 0; reranking samples at 0.7.
    pub fn default_temperature(&self) -> f64 {
        match self {
            Condition::Rerank => 0.7,
            _ => 0.0,
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ContentPart {
    Text { text: String },
    /// Base64 image payload, sent only when an image backend is configured.
    Image { media_type: String, data: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Message {
        Message {
            role,
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }

    pub fn text_content(&self) -> String {
        self.content
            .iter()
            .filter_map(|part| match part {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("the revise condition requires verifier feedback")]
    MissingFeedback,
    #[error("example is missing a question")]
    MissingQuestion,
}

/// Verifier output fed back to the model under the revise condition.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RevisionFeedback {
    pub messages: Vec<String>,
    pub labels: BTreeSet<Label>,
}

pub const SYSTEM_PROMPT: &str = "You are a physics expert. Analyze the physical scene step \
by step: initial state, transition (physical law + effect), resulting state, a short \
derivation, then final answer. Respond only with valid JSON.";

/// The compact output schema appended to trace-eliciting prompts.
pub const SCHEMA_BLOCK: &str = r#"{
  "state_0": {
    "objects": [{"name":"...","attributes":{"mass":...}}],
    "relations": [{"type":"on|contact|...","args":["o1","o2"]}],
    "forces": [{"name":"...","target":"...","direction":"...",
                "magnitude":...,"unit":"N"}],
    "variables": {"key": value},
    "assumptions": ["..."]
  },
  "transition": {
    "rule": "Name of physical law",
    "effect": "Qualitative or symbolic predicted change",
    "equation": "Optional symbolic equation",
    "evidence": ["fact or rule supporting the transition"]
  },
  "state_1": {
    "predicted_change": "What changes from state_0",
    "new_variables": {"key": value}
  },
  "derivation": "One-to-three sentence reasoning chain.",
  "answer": {
    "value": "final answer",
    "unit": "unit if numeric, else null",
    "explanation": "one-sentence justification"
  }
}"#;

pub const ANSWER_ONLY_INSTRUCTION: &str = "Provide ONLY the final answer. Respond with a JSON \
object: {\"answer\": {\"value\": \"...\"}}";

const TRACE_INSTRUCTION: &str = "Reason step by step through the physics.\n\nRespond ONLY with \
a JSON object in this exact format\n(no markdown fences, no preamble):\n";

/// Build the message list for one example under one condition. Feedback is
/// required iff the condition is `revise`.
pub fn build_prompt(
    example: &Trace,
    condition: Condition,
    feedback: Option<&RevisionFeedback>,
) -> Result<Vec<Message>, PromptError> {
    let meta = example.metadata.as_ref();
    let question = meta
        .and_then(|m| m.question.as_deref())
        .ok_or(PromptError::MissingQuestion)?;

    let mut body = String::new();
    if let Some(scene) = meta.and_then(|m| m.scene_description.as_deref()) {
        body.push_str(&format!("Scene: {scene}\n\n"));
    }
    body.push_str(&format!("Question: {question}\n"));
    if let Some(options) = meta.and_then(|m| m.options.as_ref()) {
        body.push_str(&format!("Options: {}\n", options.join(" ")));
    }
    body.push('\n');

    match condition {
        Condition::AnswerOnly => {
            body.push_str(ANSWER_ONLY_INSTRUCTION);
        }
        Condition::FullTrace | Condition::Rerank => {
            body.push_str(TRACE_INSTRUCTION);
            body.push_str(SCHEMA_BLOCK);
        }
        Condition::GoldStateAnswer => {
            let state = serde_json::to_string_pretty(&example.state_0).unwrap_or_default();
            body.push_str(&format!("Use this gold initial state:\n{state}\n\n"));
            body.push_str("Determine the answer using the provided information. ");
            body.push_str(ANSWER_ONLY_INSTRUCTION);
        }
        Condition::GoldTransAnswer => {
            let state = serde_json::to_string_pretty(&example.state_0).unwrap_or_default();
            let transition =
                serde_json::to_string_pretty(&example.transition).unwrap_or_default();
            body.push_str(&format!(
                "Use this gold initial state:\n{state}\n\nand this gold transition:\n{transition}\n\n"
            ));
            body.push_str("Determine the answer using the provided information. ");
            body.push_str(ANSWER_ONLY_INSTRUCTION);
        }
        Condition::Revise => {
            let feedback = feedback.ok_or(PromptError::MissingFeedback)?;
            let mut block = String::from("Your previous trace had the following issues:\n");
            for message in &feedback.messages {
                block.push_str(&format!("- {message}\n"));
            }
            let labels: Vec<&str> = feedback.labels.iter().map(|l| l.as_str()).collect();
            block.push_str(&format!("Error types detected: {}\n\n", labels.join(", ")));
            block.push_str("Please produce a corrected trace.\n\n");
            body = format!("{block}{body}");
            body.push_str(TRACE_INSTRUCTION);
            body.push_str(SCHEMA_BLOCK);
        }
    }

    Ok(vec![
        Message::text(Role::System, SYSTEM_PROMPT),
        Message::text(Role::User, body),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;
    use rand::SeedableRng;

    fn example() -> Trace {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        scenario::generate_trace(crate::trace::Family::Wave, &mut rng)
    }

    #[test]
    fn full_trace_prompt_carries_exact_schema_field_names() {
        let messages = build_prompt(&example(), Condition::FullTrace, None).unwrap();
        let user = messages[1].text_content();
        for field in [
            "\"state_0\"",
            "\"objects\"",
            "\"relations\"",
            "\"forces\"",
            "\"variables\"",
            "\"assumptions\"",
            "\"transition\"",
            "\"rule\"",
            "\"effect\"",
            "\"equation\"",
            "\"evidence\"",
            "\"state_1\"",
            "\"predicted_change\"",
            "\"new_variables\"",
            "\"derivation\"",
            "\"answer\"",
            "\"value\"",
            "\"unit\"",
            "\"explanation\"",
        ] {
            assert!(user.contains(field), "schema block is missing {field}");
        }
        assert_eq!(messages[0].text_content(), SYSTEM_PROMPT);
    }

    #[test]
    fn answer_only_prompt_ends_with_the_answer_instruction() {
        let messages = build_prompt(&example(), Condition::AnswerOnly, None).unwrap();
        let user = messages[1].text_content();
        assert!(user.ends_with(ANSWER_ONLY_INSTRUCTION));
        assert!(!user.contains("state_0"));
    }

    #[test]
    fn gold_state_prompt_injects_the_serialized_state() {
        let trace = example();
        let messages = build_prompt(&trace, Condition::GoldStateAnswer, None).unwrap();
        let user = messages[1].text_content();
        assert!(user.contains("gold initial state"));
        assert!(user.contains("\"frequency\""));
        let trans = build_prompt(&trace, Condition::GoldTransAnswer, None).unwrap();
        assert!(trans[1].text_content().contains("gold transition"));
    }

    #[test]
    fn revise_prompt_lists_feedback_verbatim_before_the_template() {
        let feedback = RevisionFeedback {
            messages: vec![
                "force[0] 'gravity' has unexpected direction: 'upward'".to_string(),
            ],
            labels: [Label::Force].into_iter().collect(),
        };
        let messages = build_prompt(&example(), Condition::Revise, Some(&feedback)).unwrap();
        let user = messages[1].text_content();
        assert!(user.starts_with("Your previous trace had the following issues:"));
        assert!(user.contains("- force[0] 'gravity' has unexpected direction: 'upward'"));
        assert!(user.contains("Error types detected: force"));
        assert!(user.contains("Please produce a corrected trace."));
        let feedback_pos = user.find("Error types detected").unwrap();
        let template_pos = user.find("Question:").unwrap();
        assert!(feedback_pos < template_pos);
    }

    #[test]
    fn revise_without_feedback_is_an_error() {
        assert_eq!(
            build_prompt(&example(), Condition::Revise, None).unwrap_err(),
            PromptError::MissingFeedback
        );
    }

    #[test]
    fn temperatures_follow_the_condition() {
        assert_eq!(Condition::FullTrace.default_temperature(), 0.0);
        assert_eq!(Condition::Rerank.default_temperature(), 0.7);
    }
}
