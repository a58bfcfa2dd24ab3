//! Domain types shared across the engine.
//!
//! Every type here is a plain value object. Constructors check the type's
//! invariants and reject invalid input, so nothing invalid reaches the graph.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::Embedding;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid name: {0:?}")]
    InvalidName(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Entity merge key: lowercased, whitespace collapsed, trimmed.
pub fn normalize_name(name: &str) -> Result<String, ModelError> {
    let collapsed = name.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return Err(ModelError::InvalidName(name.to_string()));
    }
    Ok(collapsed.to_lowercase())
}

/// Corpus-wide turn identity: a turn ordinal scoped to its session.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TurnRef {
    pub session_id: String,
    pub turn_id: u32,
}

impl TurnRef {
    pub fn new(session_id: impl Into<String>, turn_id: u32) -> Self {
        Self {
            session_id: session_id.into(),
            turn_id,
        }
    }
}

impl fmt::Display for TurnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.session_id, self.turn_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub String);

impl SegmentId {
    pub fn for_session(session_id: &str, ordinal: usize) -> Self {
        SegmentId(format!("{session_id}#{ordinal}"))
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_id: u32,
    pub session_id: String,
    pub speaker: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<SegmentId>,
}

impl Turn {
    pub fn new(
        session_id: impl Into<String>,
        turn_id: u32,
        speaker: impl Into<String>,
        text: impl Into<String>,
        timestamp: Option<String>,
    ) -> Result<Self, ModelError> {
        let turn = Turn {
            turn_id,
            session_id: session_id.into(),
            speaker: speaker.into(),
            text: text.into(),
            timestamp,
            segment_id: None,
        };
        turn.check()?;
        Ok(turn)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.text.trim().is_empty() {
            return Err(invalid("turn.text", "empty utterance"));
        }
        if self.session_id.trim().is_empty() {
            return Err(invalid("turn.session_id", "empty session id"));
        }
        Ok(())
    }

    pub fn turn_ref(&self) -> TurnRef {
        TurnRef::new(self.session_id.clone(), self.turn_id)
    }
}

/// One utterance as it appears in a session record. The turn id is the
/// utterance's position in the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRecord {
    pub speaker: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// A session as submitted for ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    pub turns: Vec<TurnRecord>,
}

impl SessionRecord {
    /// Turns numbered by position; a turn without its own timestamp inherits
    /// the session date.
    pub fn to_turns(&self) -> Result<Vec<Turn>, ModelError> {
        if self.session_id.trim().is_empty() {
            return Err(invalid("session.session_id", "empty session id"));
        }
        if self.turns.is_empty() {
            return Err(invalid("session.turns", "empty session"));
        }
        self.turns
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Turn::new(
                    self.session_id.clone(),
                    i as u32,
                    t.speaker.clone(),
                    t.text.clone(),
                    t.timestamp.clone().or_else(|| self.date.clone()),
                )
                .map_err(|e| match e {
                    ModelError::Invalid { reason, .. } => invalid("session.turns", format!("turn {i}: {reason}")),
                    other => other,
                })
            })
            .collect()
    }
}

/// A topical run of turns (S_i) with its retained subset (M_i) and summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: SegmentId,
    pub session_id: String,
    pub member_turns: Vec<u32>,
    pub retained_turns: Vec<u32>,
    pub summary: String,
}

impl SegmentRecord {
    pub fn new(
        segment_id: SegmentId,
        session_id: impl Into<String>,
        member_turns: Vec<u32>,
        retained_turns: Vec<u32>,
        summary: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let rec = SegmentRecord {
            segment_id,
            session_id: session_id.into(),
            member_turns,
            retained_turns,
            summary: summary.into(),
        };
        rec.check()?;
        Ok(rec)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.member_turns.is_empty() {
            return Err(invalid("segment.member_turns", "empty segment"));
        }
        if !strictly_ascending(&self.member_turns) {
            return Err(invalid("segment.member_turns", "not strictly ascending"));
        }
        if !strictly_ascending(&self.retained_turns) {
            return Err(invalid("segment.retained_turns", "not strictly ascending"));
        }
        if let Some(t) = self
            .retained_turns
            .iter()
            .find(|t| self.member_turns.binary_search(t).is_err())
        {
            return Err(invalid("segment.retained_turns", format!("turn {t} is not a member")));
        }
        if self.summary.trim().is_empty() {
            return Err(invalid("segment.summary", "empty summary"));
        }
        Ok(())
    }

    pub fn retained_ratio(&self) -> f64 {
        self.retained_turns.len() as f64 / self.member_turns.len() as f64
    }
}

pub(crate) fn strictly_ascending<T: Ord>(xs: &[T]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_id: EntityId,
    pub name: String,
    pub norm_name: String,
    pub description: String,
    pub turn_ids: BTreeSet<TurnRef>,
    pub embedding: Embedding,
}

impl Entity {
    pub fn check(&self) -> Result<(), ModelError> {
        if normalize_name(&self.name)? != self.norm_name {
            return Err(invalid("entity.norm_name", "does not match normalized name"));
        }
        if self.turn_ids.is_empty() {
            return Err(invalid("entity.turn_ids", "no provenance"));
        }
        if self.description.trim().is_empty() {
            return Err(invalid("entity.description", "empty description"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub edge_id: RelationId,
    pub subject: EntityId,
    pub relation: String,
    pub object: EntityId,
    pub description: String,
    pub source_turns: BTreeSet<TurnRef>,
    pub embedding: Embedding,
}

impl RelationEdge {
    /// Self-loops are permitted; callers may surface them separately.
    pub fn is_self_loop(&self) -> bool {
        self.subject == self.object
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.relation.trim().is_empty() {
            return Err(invalid("relation.relation", "empty relation"));
        }
        if self.source_turns.is_empty() {
            return Err(invalid("relation.source_turns", "no provenance"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryContext {
    pub query_text: String,
    pub query_embedding: Embedding,
}

impl QueryContext {
    pub fn new(query_text: impl Into<String>, query_embedding: Embedding) -> Result<Self, ModelError> {
        let query_text = query_text.into();
        if query_text.trim().is_empty() {
            return Err(invalid("query.text", "empty query"));
        }
        Ok(Self {
            query_text,
            query_embedding,
        })
    }
}

/// Retrieval knobs plus the ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub k_seed: usize,
    pub top_m_turns: usize,
    pub weight_floor: f64,
    pub uniform_weights: bool,
    pub full_graph: bool,
    pub disable_triplet_enrichment: bool,
    pub disable_selective_filter: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tolerance: 1e-10,
            max_iterations: 100,
            k_seed: 10,
            top_m_turns: 10,
            weight_floor: 1e-6,
            uniform_weights: false,
            full_graph: false,
            disable_triplet_enrichment: false,
            disable_selective_filter: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(invalid("config.damping", "must lie in (0, 1)"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("config.tolerance", "must be positive"));
        }
        if self.k_seed == 0 {
            return Err(invalid("config.k_seed", "must be at least 1"));
        }
        if !(self.weight_floor > 0.0) {
            return Err(invalid("config.weight_floor", "must be positive"));
        }
        Ok(())
    }

    /// Short label naming the active ablations, e.g. `uniform+full-graph`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.uniform_weights {
            parts.push("uniform");
        }
        if self.full_graph {
            parts.push("full-graph");
        }
        if self.disable_selective_filter {
            parts.push("no-selective");
        }
        if self.disable_triplet_enrichment {
            parts.push("turn-only");
        }
        if parts.is_empty() {
            "default".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTurn {
    pub turn: Turn,
    pub score: f64,
}

/// A relation edge as it appears in evidence: endpoint names resolved,
/// embedding omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletEvidence {
    pub edge_id: RelationId,
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub description: String,
    pub source_turns: Vec<TurnRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubgraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub turn_nodes: usize,
    pub segment_nodes: usize,
    pub entity_nodes: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub ranked_turns: Vec<RankedTurn>,
    pub triplets: Vec<TripletEvidence>,
    pub subgraph_stats: SubgraphStats,
}

impl EvidenceBundle {
    pub fn is_empty(&self) -> bool {
        self.ranked_turns.is_empty() && self.triplets.is_empty()
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.ranked_turns.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(invalid("bundle.ranked_turns", "scores increase"));
        }
        let refs: BTreeSet<TurnRef> = self.ranked_turns.iter().map(|r| r.turn.turn_ref()).collect();
        if let Some(t) = self
            .triplets
            .iter()
            .find(|t| !t.source_turns.iter().any(|s| refs.contains(s)))
        {
            return Err(invalid(
                "bundle.triplets",
                format!("{} cites no ranked turn", t.edge_id),
            ));
        }
        Ok(())
    }
}
