//! Strict parsers for the structured outputs the extraction prompts request.
//!
//! Every parser is pure. A lenient pre-pass removes code fences and any prose
//! around the first balanced bracket expression; everything after that is
//! validated strictly and rejected rather than repaired.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::normalize_name;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Not syntactically valid (unbalanced brackets, stray quotes, ...).
    Malformed,
    /// Syntactically valid but violating the expected structure.
    Schema,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("structured output rejected ({kind:?}): {detail}")]
pub struct StructuredOutputError {
    pub kind: FailureKind,
    pub detail: String,
}

impl StructuredOutputError {
    fn malformed(detail: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Malformed,
            detail: detail.into(),
        }
    }

    fn schema(detail: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Schema,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTriplet {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEntityDesc {
    pub name: String,
    pub description: String,
    pub indices: Vec<usize>,
    /// False when the model described an entity it was not asked about.
    pub expected: bool,
}

fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Returns the first balanced `[...]` expression, honoring JSON string
/// literals and escapes.
fn first_bracketed(text: &str) -> Result<&str, StructuredOutputError> {
    let start = text
        .find('[')
        .ok_or_else(|| StructuredOutputError::malformed("no JSON array found"))?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    if in_string {
        Err(StructuredOutputError::malformed("unterminated string literal"))
    } else {
        Err(StructuredOutputError::malformed("missing closing bracket"))
    }
}

fn json_array(text: &str) -> Result<Vec<Value>, StructuredOutputError> {
    let cleaned = strip_fences(text);
    let region = first_bracketed(&cleaned)?;
    match serde_json::from_str::<Value>(region) {
        Ok(Value::Array(items)) => Ok(items),
        Ok(_) => Err(StructuredOutputError::schema("expected a JSON array")),
        Err(e) => Err(StructuredOutputError::malformed(e.to_string())),
    }
}

fn as_index(v: &Value, n: usize) -> Result<usize, StructuredOutputError> {
    let i = v
        .as_u64()
        .ok_or_else(|| StructuredOutputError::schema(format!("{v} is not a non-negative integer")))?;
    let i = usize::try_from(i).map_err(|_| StructuredOutputError::schema("index overflow"))?;
    if i >= n {
        return Err(StructuredOutputError::schema(format!(
            "index {i} out of range for {n} messages"
        )));
    }
    Ok(i)
}

fn ascending_indices(items: &[Value], n: usize) -> Result<Vec<usize>, StructuredOutputError> {
    let idx = items.iter().map(|v| as_index(v, n)).collect::<Result<Vec<_>, _>>()?;
    if idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err(StructuredOutputError::schema("indices are not strictly ascending"));
    }
    Ok(idx)
}

/// Segmentation output: a partition of `0..n_messages` into ascending runs.
pub fn parse_segment_indices(text: &str, n_messages: usize) -> Result<Vec<Vec<usize>>, StructuredOutputError> {
    let outer = json_array(text)?;
    let mut segments = Vec::with_capacity(outer.len());
    for item in &outer {
        let inner = item
            .as_array()
            .ok_or_else(|| StructuredOutputError::schema("segment is not a list"))?;
        if inner.is_empty() {
            return Err(StructuredOutputError::schema("empty segment"));
        }
        segments.push(ascending_indices(inner, n_messages)?);
    }
    if segments.windows(2).any(|w| w[0][0] >= w[1][0]) {
        return Err(StructuredOutputError::schema(
            "segments are not ordered by first element",
        ));
    }
    let mut seen = vec![false; n_messages];
    for i in segments.iter().flatten() {
        if std::mem::replace(&mut seen[*i], true) {
            return Err(StructuredOutputError::schema(format!(
                "message {i} appears in two segments"
            )));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(StructuredOutputError::schema(format!(
            "message {missing} is not covered"
        )));
    }
    Ok(segments)
}

/// Selective-filter output: ascending indices below `n_messages`; may be empty.
pub fn parse_index_array(text: &str, n_messages: usize) -> Result<Vec<usize>, StructuredOutputError> {
    let items = json_array(text)?;
    ascending_indices(&items, n_messages)
}

fn parse_index_list(field: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for part in field.split(',') {
        out.push(part.trim().parse::<usize>().ok()?);
    }
    Some(out)
}

fn clip(indices: Vec<usize>, valid: &BTreeSet<usize>) -> Vec<usize> {
    let set: BTreeSet<usize> = indices.into_iter().filter(|i| valid.contains(i)).collect();
    set.into_iter().collect()
}

fn content_lines(text: &str) -> Vec<String> {
    strip_fences(text)
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// `entity1|relation|entity2|i,j` lines. Indices are clipped to `valid`; a
/// line whose indices all fall outside is dropped.
pub fn parse_pipe_triplets(text: &str, valid: &BTreeSet<usize>) -> Result<Vec<RawTriplet>, StructuredOutputError> {
    let lines = content_lines(text);
    let mut shaped = 0usize;
    let mut out = Vec::new();
    for line in &lines {
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 4 || fields[..3].iter().any(|f| f.is_empty()) {
            continue;
        }
        let Some(indices) = parse_index_list(fields[3]) else {
            continue;
        };
        shaped += 1;
        let indices = clip(indices, valid);
        if indices.is_empty() {
            continue;
        }
        out.push(RawTriplet {
            subject: fields[0].to_string(),
            relation: fields[1].to_string(),
            object: fields[2].to_string(),
            indices,
        });
    }
    if shaped == 0 && !lines.is_empty() {
        return Err(StructuredOutputError::schema("no line has the 4-field triplet shape"));
    }
    Ok(out)
}

/// `entity | description | i,j` lines. The description is everything between
/// the first and last separator.
pub fn parse_entity_descriptions(
    text: &str,
    expected_entities: &[String],
    valid: &BTreeSet<usize>,
) -> Result<Vec<RawEntityDesc>, StructuredOutputError> {
    let expected: BTreeSet<String> = expected_entities
        .iter()
        .filter_map(|e| normalize_name(e).ok())
        .collect();
    let lines = content_lines(text);
    let mut shaped = 0usize;
    let mut out = Vec::new();
    for line in &lines {
        let (Some(first), Some(last)) = (line.find('|'), line.rfind('|')) else {
            continue;
        };
        if first == last {
            continue;
        }
        let name = line[..first].trim();
        let description = line[first + 1..last].trim();
        if name.is_empty() || description.is_empty() {
            continue;
        }
        let Some(indices) = parse_index_list(&line[last + 1..]) else {
            continue;
        };
        shaped += 1;
        let indices = clip(indices, valid);
        if indices.is_empty() {
            continue;
        }
        let expected = normalize_name(name).map(|n| expected.contains(&n)).unwrap_or(false);
        out.push(RawEntityDesc {
            name: name.to_string(),
            description: description.to_string(),
            indices,
            expected,
        });
    }
    if shaped == 0 && !lines.is_empty() {
        return Err(StructuredOutputError::schema(
            "no line has the entity | description | indices shape",
        ));
    }
    Ok(out)
}
