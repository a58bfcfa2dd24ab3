use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Segmentation,
    SelectiveFilter,
    SegmentSummary,
    EntityDescription,
    TripletExtraction,
    AnswerGeneration,
    Judge,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::Segmentation,
        TemplateId::SelectiveFilter,
        TemplateId::SegmentSummary,
        TemplateId::EntityDescription,
        TemplateId::TripletExtraction,
        TemplateId::AnswerGeneration,
        TemplateId::Judge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Segmentation => "segmentation",
            TemplateId::SelectiveFilter => "selective_filter",
            TemplateId::SegmentSummary => "segment_summary",
            TemplateId::EntityDescription => "entity_description",
            TemplateId::TripletExtraction => "triplet_extraction",
            TemplateId::AnswerGeneration => "answer_generation",
            TemplateId::Judge => "judge",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            TemplateId::Segmentation => include_str!("../../prompts/segmentation.txt"),
            TemplateId::SelectiveFilter => include_str!("../../prompts/selective_filter.txt"),
            TemplateId::SegmentSummary => include_str!("../../prompts/segment_summary.txt"),
            TemplateId::EntityDescription => include_str!("../../prompts/entity_description.txt"),
            TemplateId::TripletExtraction => include_str!("../../prompts/triplet_extraction.txt"),
            TemplateId::AnswerGeneration => include_str!("../../prompts/answer_generation.txt"),
            TemplateId::Judge => include_str!("../../prompts/judge.txt"),
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateId::Segmentation => &["numbered_messages_str"],
            TemplateId::SelectiveFilter => &["formatted_conv"],
            TemplateId::SegmentSummary => &["segment_content"],
            TemplateId::EntityDescription => &["segment", "entity_list"],
            TemplateId::TripletExtraction => &["segment_text"],
            TemplateId::AnswerGeneration => &["context", "query"],
            TemplateId::Judge => &["question", "answer", "response"],
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template} has unbound placeholder {{{name}}}")]
    Unbound { template: TemplateId, name: String },
    #[error("template {template} has no placeholder {{{name}}}")]
    UnknownBinding { template: TemplateId, name: String },
}

/// A template with every placeholder substituted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub template_id: TemplateId,
    pub rendered_text: String,
    pub placeholder_bindings: BTreeMap<String, String>,
}

impl PromptInstance {
    /// Substitutes in a single left-to-right pass, so braces inside bound
    /// values are never treated as placeholders.
    pub fn render(template_id: TemplateId, bindings: &[(&str, &str)]) -> Result<Self, TemplateError> {
        let known = template_id.placeholders();
        let mut map = BTreeMap::new();
        for (k, v) in bindings {
            if !known.contains(k) {
                return Err(TemplateError::UnknownBinding {
                    template: template_id,
                    name: k.to_string(),
                });
            }
            map.insert(k.to_string(), v.to_string());
        }
        let src = template_id.text();
        let mut out = String::with_capacity(src.len() + bindings.iter().map(|b| b.1.len()).sum::<usize>());
        let mut rest = src;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let ident_len = after
                .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
                .unwrap_or(after.len());
            let ident = &after[..ident_len];
            if ident_len > 0 && after[ident_len..].starts_with('}') && known.contains(&ident) {
                let value = map.get(ident).ok_or_else(|| TemplateError::Unbound {
                    template: template_id,
                    name: ident.to_string(),
                })?;
                out.push_str(value);
                rest = &after[ident_len + 1..];
            } else {
                out.push('{');
                rest = after;
            }
        }
        out.push_str(rest);
        Ok(PromptInstance {
            template_id,
            rendered_text: out,
            placeholder_bindings: map,
        })
    }
}
