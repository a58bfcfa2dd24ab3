//! Versioned JSON snapshots with byte-stable output: keys are sorted and
//! every float is written with 17 significant digits.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::Value;
use thiserror::Error;

use super::{GraphError, MemoryGraph, SegmentNode, TurnNode};
use crate::model::{Entity, EntityId, RelationEdge, SegmentId, TurnRef};

pub const SNAPSHOT_VERSION: u32 = 1;
pub const SNAPSHOT_EXTENSION: &str = "memgraph.json";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot version {found} is not supported (expected {SNAPSHOT_VERSION})")]
    Version { found: u64 },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("graph does not validate: {0}")]
    Invalid(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Serialize, Deserialize)]
struct MentionEdge {
    entity: EntityId,
    turn: TurnRef,
}

#[derive(Serialize, Deserialize)]
struct HierarchyEdge {
    turn: TurnRef,
    segment: SegmentId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotDoc {
    version: u32,
    dim: usize,
    turns: Vec<TurnNode>,
    segments: Vec<SegmentNode>,
    entities: Vec<Entity>,
    relation_edges: Vec<RelationEdge>,
    mention_edges: Vec<MentionEdge>,
    hierarchy_edges: Vec<HierarchyEdge>,
}

/// `{:.16e}` keeps 17 significant digits, which round-trips every f64.
pub(crate) struct StableFloats;

impl Formatter for StableFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes any value with sorted keys and stable float text.
pub fn to_stable_json<T: Serialize>(value: &T) -> Vec<u8> {
    // Going through Value sorts object keys.
    let value = serde_json::to_value(value).expect("in-memory types serialize");
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, StableFloats);
    value.serialize(&mut ser).expect("writing to a Vec cannot fail");
    out.push(b'\n');
    out
}

pub fn to_bytes(graph: &MemoryGraph) -> Result<Vec<u8>, SnapshotError> {
    graph.validate()?;
    let doc = SnapshotDoc {
        version: SNAPSHOT_VERSION,
        dim: graph.dim(),
        turns: graph.turns().cloned().collect(),
        segments: graph.segments().cloned().collect(),
        entities: graph.entities().to_vec(),
        relation_edges: graph.relations().to_vec(),
        mention_edges: graph
            .entities()
            .iter()
            .flat_map(|e| {
                e.turn_ids.iter().map(|t| MentionEdge {
                    entity: e.entity_id,
                    turn: t.clone(),
                })
            })
            .collect(),
        hierarchy_edges: graph
            .turns()
            .filter_map(|t| {
                t.turn.segment_id.as_ref().map(|s| HierarchyEdge {
                    turn: t.turn.turn_ref(),
                    segment: s.clone(),
                })
            })
            .collect(),
    };
    Ok(to_stable_json(&doc))
}

pub fn from_bytes(bytes: &[u8]) -> Result<MemoryGraph, SnapshotError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| SnapshotError::Corrupt("missing version".into()))?;
    if version != SNAPSHOT_VERSION as u64 {
        return Err(SnapshotError::Version { found: version });
    }
    let doc: SnapshotDoc = serde_json::from_value(value).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    let g = MemoryGraph::from_parts(doc.dim, doc.turns, doc.segments, doc.entities, doc.relation_edges)
        .map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    // Edge lists are redundant with node data; they must agree exactly.
    let mentions: Vec<(EntityId, TurnRef)> = doc.mention_edges.into_iter().map(|m| (m.entity, m.turn)).collect();
    let expected: Vec<(EntityId, TurnRef)> = g
        .entities()
        .iter()
        .flat_map(|e| e.turn_ids.iter().map(move |t| (e.entity_id, t.clone())))
        .collect();
    if mentions != expected {
        return Err(SnapshotError::Corrupt(
            "mention_edges disagree with entity provenance".into(),
        ));
    }
    let hierarchy: Vec<(TurnRef, SegmentId)> = doc.hierarchy_edges.into_iter().map(|h| (h.turn, h.segment)).collect();
    let expected: Vec<(TurnRef, SegmentId)> = g
        .turns()
        .filter_map(|t| t.turn.segment_id.clone().map(|s| (t.turn.turn_ref(), s)))
        .collect();
    if hierarchy != expected {
        return Err(SnapshotError::Corrupt(
            "hierarchy_edges disagree with turn segments".into(),
        ));
    }
    Ok(g)
}

pub fn save(graph: &MemoryGraph, path: &Path) -> Result<(), SnapshotError> {
    let bytes = to_bytes(graph)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MemoryGraph, SnapshotError> {
    from_bytes(&std::fs::read(path)?)
}
