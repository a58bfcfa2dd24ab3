//! Turns an evidence bundle into the answer prompt context, and runs the
//! answer and judge prompts.

use thiserror::Error;

use crate::llm::{GatewayError, LlmGateway, TemplateId};
use crate::model::EvidenceBundle;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnswerError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("judge output has no verdict marker: {0:?}")]
    JudgeUnparseable(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub const FACT_SEP: &str = " \u{2014} ";

/// Layout:
///
/// ```text
/// Conversation excerpts:
/// [session | timestamp | speaker]: text
/// ...
///
/// Known facts:
/// subject <D> relation <D> object (turns: s:1, s:4)
/// ```
///
/// where `<D>` is [`FACT_SEP`], a spaced U+2014 dash.
///
/// A missing timestamp prints as `-`. The facts block is left out when there
/// are no triplets; an empty bundle gives an empty string.
pub fn compose_context(bundle: &EvidenceBundle) -> String {
    let mut out = String::new();
    if !bundle.ranked_turns.is_empty() {
        out.push_str("Conversation excerpts:\n");
        for r in &bundle.ranked_turns {
            let t = &r.turn;
            out.push_str(&format!(
                "[{} | {} | {}]: {}\n",
                t.session_id,
                t.timestamp.as_deref().unwrap_or("-"),
                t.speaker,
                t.text
            ));
        }
    }
    if !bundle.triplets.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("Known facts:\n");
        for f in &bundle.triplets {
            let refs: Vec<String> = f.source_turns.iter().map(|t| t.to_string()).collect();
            out.push_str(&format!(
                "{}{FACT_SEP}{}{FACT_SEP}{} (turns: {})\n",
                f.subject,
                f.relation,
                f.object,
                refs.join(", ")
            ));
        }
    }
    out
}

pub fn answer(gateway: &LlmGateway, query: &str, bundle: &EvidenceBundle) -> Result<String, AnswerError> {
    let context = compose_context(bundle);
    let r = gateway.run(
        crate::llm::UNSCOPED,
        TemplateId::AnswerGeneration,
        &[("context", &context), ("query", query)],
    )?;
    Ok(r.text.trim().to_string())
}

/// Whichever marker appears first decides; matching is case-insensitive.
pub fn parse_verdict(output: &str) -> Result<bool, AnswerError> {
    let lower = output.to_lowercase();
    match (lower.find("[[yes]]"), lower.find("[[no]]")) {
        (Some(y), Some(n)) => Ok(y < n),
        (Some(_), None) => Ok(true),
        (None, Some(_)) => Ok(false),
        (None, None) => Err(AnswerError::JudgeUnparseable(output.to_string())),
    }
}

pub fn judge(gateway: &LlmGateway, question: &str, reference: &str, response: &str) -> Result<bool, AnswerError> {
    if [question, reference, response].iter().any(|s| s.trim().is_empty()) {
        return Err(AnswerError::InvalidInput("judge inputs must be non-empty".into()));
    }
    let r = gateway.run(
        crate::llm::UNSCOPED,
        TemplateId::Judge,
        &[("question", question), ("answer", reference), ("response", response)],
    )?;
    gateway.track(parse_verdict(&r.text))
}
