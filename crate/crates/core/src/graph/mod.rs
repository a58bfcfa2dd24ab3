//! The heterogeneous memory graph: segment, turn, and entity nodes joined by
//! hierarchy (turn-segment), mention (entity-turn), and relation
//! (entity-entity) edges.

pub mod snapshot;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder, Embedding};
use crate::model::{
    normalize_name, Entity, EntityId, ModelError, RelationEdge, RelationId, SegmentId, SegmentRecord, Turn, TurnRef,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

fn integrity(msg: impl Into<String>) -> GraphError {
    GraphError::Integrity(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnNode {
    #[serde(flatten)]
    pub turn: Turn,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentNode {
    #[serde(flatten)]
    pub record: SegmentRecord,
    pub embedding: Embedding,
}

/// A triplet whose provenance is already expressed as global turn refs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedTriplet {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub source_turns: BTreeSet<TurnRef>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub turns: usize,
    pub segments: usize,
    pub entities: usize,
    pub relation_edges: usize,
    pub mention_edges: usize,
    pub hierarchy_edges: usize,
    pub mean_entity_degree: f64,
}

impl GraphStats {
    pub fn nodes(&self) -> usize {
        self.turns + self.segments + self.entities
    }

    pub fn edges(&self) -> usize {
        self.relation_edges + self.mention_edges + self.hierarchy_edges
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryGraph {
    dim: usize,
    turns: BTreeMap<TurnRef, TurnNode>,
    segments: BTreeMap<SegmentId, SegmentNode>,
    entities: Vec<Entity>,
    relations: Vec<RelationEdge>,
    entity_by_name: BTreeMap<String, EntityId>,
    relation_by_key: BTreeMap<(EntityId, String, EntityId), RelationId>,
    turn_entities: BTreeMap<TurnRef, BTreeSet<EntityId>>,
    segment_turns: BTreeMap<SegmentId, BTreeSet<TurnRef>>,
    entity_relations: Vec<BTreeSet<RelationId>>,
    turn_relations: BTreeMap<TurnRef, BTreeSet<RelationId>>,
}

impl MemoryGraph {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            turns: BTreeMap::new(),
            segments: BTreeMap::new(),
            entities: Vec::new(),
            relations: Vec::new(),
            entity_by_name: BTreeMap::new(),
            relation_by_key: BTreeMap::new(),
            turn_entities: BTreeMap::new(),
            segment_turns: BTreeMap::new(),
            entity_relations: Vec::new(),
            turn_relations: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty() && self.segments.is_empty() && self.entities.is_empty()
    }

    fn check_dim(&self, e: &Embedding) -> Result<(), GraphError> {
        if e.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                left: self.dim,
                right: e.dim(),
            }
            .into());
        }
        Ok(())
    }

    pub fn add_turn(&mut self, turn: Turn, embedding: Embedding) -> Result<(), GraphError> {
        turn.check()?;
        self.check_dim(&embedding)?;
        let key = turn.turn_ref();
        if self.turns.contains_key(&key) {
            return Err(integrity(format!("turn {key} already exists")));
        }
        if let Some(seg) = &turn.segment_id {
            return Err(integrity(format!(
                "turn {key} arrives pre-linked to {seg}; use link_hierarchy"
            )));
        }
        self.turns.insert(key, TurnNode { turn, embedding });
        Ok(())
    }

    pub fn add_segment(&mut self, record: SegmentRecord, embedding: Embedding) -> Result<(), GraphError> {
        record.check()?;
        self.check_dim(&embedding)?;
        if self.segments.contains_key(&record.segment_id) {
            return Err(integrity(format!("segment {} already exists", record.segment_id)));
        }
        self.segment_turns.entry(record.segment_id.clone()).or_default();
        self.segments
            .insert(record.segment_id.clone(), SegmentNode { record, embedding });
        Ok(())
    }

    /// Creates an entity or merges into the one sharing its normalized name.
    /// A merge unions provenance, appends the description after `"; "` unless
    /// that exact text is already present, and re-embeds the result.
    pub fn upsert_entity(
        &mut self,
        embedder: &dyn Embedder,
        name: &str,
        description: &str,
        turn_ids: &BTreeSet<TurnRef>,
    ) -> Result<EntityId, GraphError> {
        let norm = normalize_name(name)?;
        if turn_ids.is_empty() {
            return Err(GraphError::InvalidInput(format!("entity {name:?} has no provenance")));
        }
        if let Some(t) = turn_ids.iter().find(|t| !self.turns.contains_key(t)) {
            return Err(integrity(format!("entity {name:?} cites unknown turn {t}")));
        }
        let description = description.trim();
        let description = if description.is_empty() {
            name.trim()
        } else {
            description
        };
        let id = match self.entity_by_name.get(&norm) {
            Some(&id) => {
                let current = &self.entities[id.0 as usize].description;
                if !current.split("; ").any(|part| part == description) {
                    let merged = format!("{current}; {description}");
                    let embedding = embedder.embed(&merged)?;
                    self.check_dim(&embedding)?;
                    let e = &mut self.entities[id.0 as usize];
                    e.description = merged;
                    e.embedding = embedding;
                }
                id
            }
            None => {
                let embedding = embedder.embed(description)?;
                self.check_dim(&embedding)?;
                let id = EntityId(self.entities.len() as u32);
                self.entities.push(Entity {
                    entity_id: id,
                    name: name.trim().to_string(),
                    norm_name: norm.clone(),
                    description: description.to_string(),
                    turn_ids: BTreeSet::new(),
                    embedding,
                });
                self.entity_relations.push(BTreeSet::new());
                self.entity_by_name.insert(norm, id);
                id
            }
        };
        for t in turn_ids {
            self.link_mention(id, t)?;
        }
        Ok(id)
    }

    /// Stores a relation edge, auto-creating unseen endpoints with their
    /// surface name as description. A repeated (subject, relation, object)
    /// unions provenance into the existing edge. Both endpoints are linked to
    /// every source turn.
    pub fn add_relation_edge(
        &mut self,
        embedder: &dyn Embedder,
        triplet: &ResolvedTriplet,
    ) -> Result<RelationId, GraphError> {
        let relation = triplet.relation.split_whitespace().collect::<Vec<_>>().join(" ");
        if relation.is_empty() {
            return Err(GraphError::InvalidInput("empty relation".into()));
        }
        if triplet.source_turns.is_empty() {
            return Err(GraphError::InvalidInput("triplet has no provenance".into()));
        }
        let subject = self.resolve_endpoint(embedder, &triplet.subject, &triplet.source_turns)?;
        let object = self.resolve_endpoint(embedder, &triplet.object, &triplet.source_turns)?;
        let key = (subject, relation.to_lowercase(), object);
        let id = match self.relation_by_key.get(&key) {
            Some(&id) => {
                self.relations[id.0 as usize]
                    .source_turns
                    .extend(triplet.source_turns.iter().cloned());
                id
            }
            None => {
                let description = format!(
                    "{} {} {}",
                    self.entities[subject.0 as usize].name, relation, self.entities[object.0 as usize].name
                );
                let embedding = embedder.embed(&description)?;
                self.check_dim(&embedding)?;
                let id = RelationId(self.relations.len() as u32);
                self.relations.push(RelationEdge {
                    edge_id: id,
                    subject,
                    relation,
                    object,
                    description,
                    source_turns: triplet.source_turns.clone(),
                    embedding,
                });
                self.relation_by_key.insert(key, id);
                self.entity_relations[subject.0 as usize].insert(id);
                self.entity_relations[object.0 as usize].insert(id);
                id
            }
        };
        for t in &triplet.source_turns {
            self.turn_relations.entry(t.clone()).or_default().insert(id);
        }
        Ok(id)
    }

    fn resolve_endpoint(
        &mut self,
        embedder: &dyn Embedder,
        name: &str,
        turns: &BTreeSet<TurnRef>,
    ) -> Result<EntityId, GraphError> {
        let norm = normalize_name(name)?;
        match self.entity_by_name.get(&norm) {
            Some(&id) => {
                if let Some(t) = turns.iter().find(|t| !self.turns.contains_key(t)) {
                    return Err(integrity(format!("triplet cites unknown turn {t}")));
                }
                for t in turns {
                    self.link_mention(id, t)?;
                }
                Ok(id)
            }
            None => self.upsert_entity(embedder, name, name, turns),
        }
    }

    /// Records the undirected entity-turn edge once; repeated calls are no-ops.
    pub fn link_mention(&mut self, entity: EntityId, turn: &TurnRef) -> Result<(), GraphError> {
        if entity.0 as usize >= self.entities.len() {
            return Err(integrity(format!("unknown entity {entity}")));
        }
        if !self.turns.contains_key(turn) {
            return Err(integrity(format!("unknown turn {turn}")));
        }
        self.entities[entity.0 as usize].turn_ids.insert(turn.clone());
        self.turn_entities.entry(turn.clone()).or_default().insert(entity);
        Ok(())
    }

    /// Records the turn-segment edge. A turn belongs to at most one segment.
    pub fn link_hierarchy(&mut self, turn: &TurnRef, segment: &SegmentId) -> Result<(), GraphError> {
        let seg = self
            .segments
            .get(segment)
            .ok_or_else(|| integrity(format!("unknown segment {segment}")))?;
        if seg.record.session_id != turn.session_id {
            return Err(integrity(format!("turn {turn} is not in the session of {segment}")));
        }
        let node = self
            .turns
            .get_mut(turn)
            .ok_or_else(|| integrity(format!("unknown turn {turn}")))?;
        match &node.turn.segment_id {
            Some(existing) if existing == segment => return Ok(()),
            Some(existing) => {
                return Err(integrity(format!(
                    "turn {turn} already belongs to {existing}, cannot join {segment}"
                )))
            }
            None => node.turn.segment_id = Some(segment.clone()),
        }
        self.segment_turns
            .entry(segment.clone())
            .or_default()
            .insert(turn.clone());
        Ok(())
    }

    pub fn turn(&self, t: &TurnRef) -> Option<&TurnNode> {
        self.turns.get(t)
    }

    pub fn turns(&self) -> impl Iterator<Item = &TurnNode> {
        self.turns.values()
    }

    pub fn segment(&self, s: &SegmentId) -> Option<&SegmentNode> {
        self.segments.get(s)
    }

    pub fn segments(&self) -> impl Iterator<Item = &SegmentNode> {
        self.segments.values()
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id.0 as usize)
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity_named(&self, name: &str) -> Option<&Entity> {
        let norm = normalize_name(name).ok()?;
        self.entity_by_name.get(&norm).map(|id| &self.entities[id.0 as usize])
    }

    pub fn relation(&self, id: RelationId) -> Option<&RelationEdge> {
        self.relations.get(id.0 as usize)
    }

    pub fn relations(&self) -> &[RelationEdge] {
        &self.relations
    }

    pub fn entities_of_turn(&self, t: &TurnRef) -> impl Iterator<Item = EntityId> + '_ {
        self.turn_entities.get(t).into_iter().flatten().copied()
    }

    pub fn turns_of_segment(&self, s: &SegmentId) -> impl Iterator<Item = &TurnRef> + '_ {
        self.segment_turns.get(s).into_iter().flatten()
    }

    pub fn relations_of_entity(&self, e: EntityId) -> impl Iterator<Item = RelationId> + '_ {
        self.entity_relations.get(e.0 as usize).into_iter().flatten().copied()
    }

    pub fn relations_citing(&self, t: &TurnRef) -> impl Iterator<Item = RelationId> + '_ {
        self.turn_relations.get(t).into_iter().flatten().copied()
    }

    pub fn session_ids(&self) -> BTreeSet<String> {
        self.segments.values().map(|s| s.record.session_id.clone()).collect()
    }

    pub fn stats(&self) -> GraphStats {
        let mention_edges: usize = self.entities.iter().map(|e| e.turn_ids.len()).sum();
        let relation_endpoints = 2 * self.relations.len();
        GraphStats {
            turns: self.turns.len(),
            segments: self.segments.len(),
            entities: self.entities.len(),
            relation_edges: self.relations.len(),
            mention_edges,
            hierarchy_edges: self.turns.values().filter(|t| t.turn.segment_id.is_some()).count(),
            mean_entity_degree: if self.entities.is_empty() {
                0.0
            } else {
                (mention_edges + relation_endpoints) as f64 / self.entities.len() as f64
            },
        }
    }

    /// Full referential-integrity check.
    pub fn validate(&self) -> Result<(), GraphError> {
        let unit = |e: &Embedding, what: &dyn std::fmt::Display| -> Result<(), GraphError> {
            self.check_dim(e)?;
            if (e.norm() - 1.0).abs() > 1e-9 {
                return Err(integrity(format!("{what} embedding is not unit length")));
            }
            Ok(())
        };
        for (key, node) in &self.turns {
            node.turn.check()?;
            if *key != node.turn.turn_ref() {
                return Err(integrity(format!(
                    "turn keyed {key} carries id {}",
                    node.turn.turn_ref()
                )));
            }
            unit(&node.embedding, key)?;
            if let Some(seg) = &node.turn.segment_id {
                let s = self
                    .segments
                    .get(seg)
                    .ok_or_else(|| integrity(format!("turn {key} links missing segment {seg}")))?;
                if s.record.session_id != key.session_id {
                    return Err(integrity(format!("turn {key} links foreign segment {seg}")));
                }
                if s.record.retained_turns.binary_search(&key.turn_id).is_err() {
                    return Err(integrity(format!("turn {key} is not retained by {seg}")));
                }
            }
        }
        for (id, node) in &self.segments {
            node.record.check()?;
            if *id != node.record.segment_id {
                return Err(integrity(format!(
                    "segment keyed {id} carries id {}",
                    node.record.segment_id
                )));
            }
            unit(&node.embedding, id)?;
        }
        let mut by_name = BTreeMap::new();
        for (i, e) in self.entities.iter().enumerate() {
            if e.entity_id.0 as usize != i {
                return Err(integrity(format!("entity slot {i} holds {}", e.entity_id)));
            }
            e.check()?;
            unit(&e.embedding, &e.entity_id)?;
            if by_name.insert(e.norm_name.clone(), e.entity_id).is_some() {
                return Err(integrity(format!("duplicate entity name {:?}", e.norm_name)));
            }
            if let Some(t) = e.turn_ids.iter().find(|t| !self.turns.contains_key(t)) {
                return Err(integrity(format!("{} cites unknown turn {t}", e.entity_id)));
            }
        }
        for (i, r) in self.relations.iter().enumerate() {
            if r.edge_id.0 as usize != i {
                return Err(integrity(format!("relation slot {i} holds {}", r.edge_id)));
            }
            r.check()?;
            unit(&r.embedding, &r.edge_id)?;
            for end in [r.subject, r.object] {
                if end.0 as usize >= self.entities.len() {
                    return Err(integrity(format!("{} points at unknown {end}", r.edge_id)));
                }
            }
            if let Some(t) = r.source_turns.iter().find(|t| !self.turns.contains_key(t)) {
                return Err(integrity(format!("{} cites unknown turn {t}", r.edge_id)));
            }
        }
        // Derived indexes must agree with the primary data.
        let mut rebuilt = self.clone();
        rebuilt.rebuild_indexes();
        if rebuilt.entity_by_name != self.entity_by_name
            || rebuilt.relation_by_key != self.relation_by_key
            || rebuilt.turn_entities != self.turn_entities
            || rebuilt.segment_turns != self.segment_turns
            || rebuilt.entity_relations != self.entity_relations
            || rebuilt.turn_relations != self.turn_relations
        {
            return Err(integrity("adjacency indexes disagree with node data"));
        }
        Ok(())
    }

    fn rebuild_indexes(&mut self) {
        self.entity_by_name = self
            .entities
            .iter()
            .map(|e| (e.norm_name.clone(), e.entity_id))
            .collect();
        self.relation_by_key = self
            .relations
            .iter()
            .map(|r| ((r.subject, r.relation.to_lowercase(), r.object), r.edge_id))
            .collect();
        self.turn_entities.clear();
        for e in &self.entities {
            for t in &e.turn_ids {
                self.turn_entities.entry(t.clone()).or_default().insert(e.entity_id);
            }
        }
        self.segment_turns = self.segments.keys().map(|k| (k.clone(), BTreeSet::new())).collect();
        for (k, node) in &self.turns {
            if let Some(seg) = &node.turn.segment_id {
                self.segment_turns.entry(seg.clone()).or_default().insert(k.clone());
            }
        }
        self.entity_relations = vec![BTreeSet::new(); self.entities.len()];
        self.turn_relations.clear();
        for r in &self.relations {
            for end in [r.subject, r.object] {
                if let Some(set) = self.entity_relations.get_mut(end.0 as usize) {
                    set.insert(r.edge_id);
                }
            }
            for t in &r.source_turns {
                self.turn_relations.entry(t.clone()).or_default().insert(r.edge_id);
            }
        }
    }

    /// Rebuilds a graph from its primary parts and validates it.
    pub(crate) fn from_parts(
        dim: usize,
        turns: Vec<TurnNode>,
        segments: Vec<SegmentNode>,
        entities: Vec<Entity>,
        relations: Vec<RelationEdge>,
    ) -> Result<Self, GraphError> {
        let mut g = MemoryGraph::new(dim);
        for t in turns {
            let key = t.turn.turn_ref();
            if g.turns.insert(key.clone(), t).is_some() {
                return Err(integrity(format!("duplicate turn {key}")));
            }
        }
        for s in segments {
            let key = s.record.segment_id.clone();
            if g.segments.insert(key.clone(), s).is_some() {
                return Err(integrity(format!("duplicate segment {key}")));
            }
        }
        g.entities = entities;
        g.relations = relations;
        g.rebuild_indexes();
        g.validate()?;
        Ok(g)
    }
}
