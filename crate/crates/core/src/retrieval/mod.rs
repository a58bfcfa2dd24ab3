//! Query-time retrieval: multi-aspect seeding, one-hop subgraph assembly,
//! query-conditioned edge weights, weighted personalized PageRank, turn
//! ranking, and triplet enrichment.

pub mod pagerank;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::embed::{cosine, EmbedError, Embedder, Embedding};
use crate::graph::MemoryGraph;
use crate::model::{
    EntityId, EvidenceBundle, ModelError, QueryContext, RankedTurn, RelationId, RetrievalConfig, SegmentId,
    SubgraphStats, TripletEvidence, TurnRef,
};
use pagerank::{personalized_pagerank, PageRankError, PageRankParams, ScoreVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("the memory graph is empty")]
    EmptyGraph,
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("internal invariant violated: {0}")]
    Internal(#[from] PageRankError),
}

/// Node identity across the three node types. The derived order (segments,
/// then turns, then entities, each by id) is the tie-break order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum NodeKey {
    Segment(SegmentId),
    Turn(TurnRef),
    Entity(EntityId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Hierarchy,
    Mention,
    Relation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedSet {
    pub segment_seeds: Vec<(SegmentId, f64)>,
    pub entity_seeds: Vec<(EntityId, f64)>,
    pub relation_seeds: Vec<(RelationId, f64)>,
}

impl SeedSet {
    pub fn is_empty(&self) -> bool {
        self.segment_seeds.is_empty() && self.entity_seeds.is_empty() && self.relation_seeds.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubEdge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relation: Option<RelationId>,
    /// Applied in both directions.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    /// Sorted by [`NodeKey`] order.
    pub nodes: Vec<NodeKey>,
    pub edges: Vec<SubEdge>,
    pub seed_values: Vec<f64>,
}

impl Subgraph {
    pub fn index_of(&self, key: &NodeKey) -> Option<usize> {
        self.nodes.binary_search(key).ok()
    }

    pub fn turns(&self) -> impl Iterator<Item = &TurnRef> {
        self.nodes.iter().filter_map(|n| match n {
            NodeKey::Turn(t) => Some(t),
            _ => None,
        })
    }

    pub fn edge_list(&self) -> Vec<(usize, usize, f64)> {
        self.edges.iter().map(|e| (e.a, e.b, e.weight)).collect()
    }

    pub fn stats(&self, scores: &ScoreVector) -> SubgraphStats {
        let count = |f: fn(&NodeKey) -> bool| self.nodes.iter().filter(|n| f(n)).count();
        SubgraphStats {
            nodes: self.nodes.len(),
            edges: self.edges.len(),
            turn_nodes: count(|n| matches!(n, NodeKey::Turn(_))),
            segment_nodes: count(|n| matches!(n, NodeKey::Segment(_))),
            entity_nodes: count(|n| matches!(n, NodeKey::Entity(_))),
            iterations: scores.iterations,
            converged: scores.converged,
        }
    }
}

/// Everything one retrieval produced. Only `bundle` is part of the
/// deterministic output; `pagerank_ms` is wall-clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub bundle: EvidenceBundle,
    pub seeds: SeedSet,
    pub subgraph: Subgraph,
    pub scores: ScoreVector,
    pub pagerank_ms: f64,
}

impl RetrievalOutcome {
    pub fn subgraph_turns(&self) -> BTreeSet<TurnRef> {
        self.subgraph.turns().cloned().collect()
    }
}

fn sim(q: &Embedding, e: &Embedding) -> Result<f64, RetrievalError> {
    Ok(cosine(q, e)?)
}

fn top_k<K: Ord + Clone>(mut scored: Vec<(K, f64)>, k: usize) -> Vec<(K, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Exact top-k per aspect; ties go to the smaller id.
pub fn seed_search(graph: &MemoryGraph, q: &QueryContext, cfg: &RetrievalConfig) -> Result<SeedSet, RetrievalError> {
    if graph.is_empty() {
        return Err(RetrievalError::EmptyGraph);
    }
    let qe = &q.query_embedding;
    let segments = graph
        .segments()
        .map(|s| Ok((s.record.segment_id.clone(), sim(qe, &s.embedding)?)))
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    let entities = graph
        .entities()
        .iter()
        .map(|e| Ok((e.entity_id, sim(qe, &e.embedding)?)))
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    let relations = graph
        .relations()
        .iter()
        .map(|r| Ok((r.edge_id, sim(qe, &r.embedding)?)))
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    Ok(SeedSet {
        segment_seeds: top_k(segments, cfg.k_seed),
        entity_seeds: top_k(entities, cfg.k_seed),
        relation_seeds: top_k(relations, cfg.k_seed),
    })
}

/// Edge weight for the given edge. Uniform mode returns 1.
pub fn edge_weight(
    graph: &MemoryGraph,
    q: &Embedding,
    kind: EdgeKind,
    a: &NodeKey,
    b: &NodeKey,
    relation: Option<RelationId>,
    cfg: &RetrievalConfig,
) -> Result<f64, RetrievalError> {
    if cfg.uniform_weights {
        return Ok(1.0);
    }
    let floor = |s: f64| s.max(0.0).max(cfg.weight_floor);
    let raw = match kind {
        EdgeKind::Mention => {
            let e = [a, b]
                .into_iter()
                .find_map(|n| match n {
                    NodeKey::Entity(e) => Some(*e),
                    _ => None,
                })
                .expect("mention edge has an entity endpoint");
            sim(q, &graph.entity(e).expect("entity in graph").embedding)?
        }
        EdgeKind::Relation => {
            let r = relation.expect("relation edge carries its id");
            sim(q, &graph.relation(r).expect("relation in graph").embedding)?
        }
        EdgeKind::Hierarchy => {
            let t = [a, b]
                .into_iter()
                .find_map(|n| match n {
                    NodeKey::Turn(t) => Some(t),
                    _ => None,
                })
                .expect("hierarchy edge has a turn endpoint");
            let sims = graph
                .entities_of_turn(t)
                .map(|e| sim(q, &graph.entity(e).expect("entity in graph").embedding))
                .collect::<Result<Vec<_>, _>>()?;
            if sims.is_empty() {
                return Ok(cfg.weight_floor);
            }
            sims.iter().sum::<f64>() / sims.len() as f64
        }
    };
    Ok(floor(raw))
}

fn rep_embedding<'g>(graph: &'g MemoryGraph, node: &NodeKey) -> &'g Embedding {
    match node {
        NodeKey::Segment(s) => &graph.segment(s).expect("segment in graph").embedding,
        NodeKey::Turn(t) => &graph.turn(t).expect("turn in graph").embedding,
        NodeKey::Entity(e) => &graph.entity(*e).expect("entity in graph").embedding,
    }
}

/// `max(cos(q, rep(v)), 0)` normalized to sum 1; uniform if all are zero.
pub fn seed_values(graph: &MemoryGraph, q: &Embedding, nodes: &[NodeKey]) -> Result<Vec<f64>, RetrievalError> {
    let raw = nodes
        .iter()
        .map(|n| Ok(sim(q, rep_embedding(graph, n))?.max(0.0)))
        .collect::<Result<Vec<f64>, RetrievalError>>()?;
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        Ok(raw.iter().map(|x| x / total).collect())
    } else if nodes.is_empty() {
        Ok(Vec::new())
    } else {
        Ok(vec![1.0 / nodes.len() as f64; nodes.len()])
    }
}

fn neighbours(graph: &MemoryGraph, node: &NodeKey, out: &mut BTreeSet<NodeKey>) {
    match node {
        NodeKey::Segment(s) => out.extend(graph.turns_of_segment(s).cloned().map(NodeKey::Turn)),
        NodeKey::Turn(t) => {
            if let Some(seg) = graph.turn(t).and_then(|n| n.turn.segment_id.clone()) {
                out.insert(NodeKey::Segment(seg));
            }
            out.extend(graph.entities_of_turn(t).map(NodeKey::Entity));
        }
        NodeKey::Entity(e) => {
            let entity = graph.entity(*e).expect("entity in graph");
            out.extend(entity.turn_ids.iter().cloned().map(NodeKey::Turn));
            for r in graph.relations_of_entity(*e) {
                let r = graph.relation(r).expect("relation in graph");
                out.insert(NodeKey::Entity(r.subject));
                out.insert(NodeKey::Entity(r.object));
            }
        }
    }
}

/// Node set of the query subgraph: seeds, relation-seed endpoints, their
/// one-hop neighbours, and the parent segment of every included turn.
pub fn subgraph_nodes(graph: &MemoryGraph, seeds: &SeedSet, cfg: &RetrievalConfig) -> Vec<NodeKey> {
    if cfg.full_graph {
        let mut all: Vec<NodeKey> = graph
            .segments()
            .map(|s| NodeKey::Segment(s.record.segment_id.clone()))
            .chain(graph.turns().map(|t| NodeKey::Turn(t.turn.turn_ref())))
            .chain(graph.entities().iter().map(|e| NodeKey::Entity(e.entity_id)))
            .collect();
        all.sort();
        return all;
    }
    let mut frontier: BTreeSet<NodeKey> = BTreeSet::new();
    frontier.extend(seeds.segment_seeds.iter().map(|(s, _)| NodeKey::Segment(s.clone())));
    frontier.extend(seeds.entity_seeds.iter().map(|(e, _)| NodeKey::Entity(*e)));
    for (r, _) in &seeds.relation_seeds {
        let r = graph.relation(*r).expect("relation in graph");
        frontier.insert(NodeKey::Entity(r.subject));
        frontier.insert(NodeKey::Entity(r.object));
    }
    let mut nodes = frontier.clone();
    for n in &frontier {
        neighbours(graph, n, &mut nodes);
    }
    let parents: Vec<NodeKey> = nodes
        .iter()
        .filter_map(|n| match n {
            NodeKey::Turn(t) => graph
                .turn(t)
                .and_then(|n| n.turn.segment_id.clone())
                .map(NodeKey::Segment),
            _ => None,
        })
        .collect();
    nodes.extend(parents);
    nodes.into_iter().collect()
}

/// Induced edges among `nodes`, weighted for the query.
pub fn induced_edges(
    graph: &MemoryGraph,
    q: &Embedding,
    nodes: &[NodeKey],
    cfg: &RetrievalConfig,
) -> Result<Vec<SubEdge>, RetrievalError> {
    let index = |k: &NodeKey| nodes.binary_search(k).ok();
    let mut edges = Vec::new();
    let mut push = |a: usize, b: usize, kind: EdgeKind, relation: Option<RelationId>| -> Result<(), RetrievalError> {
        let weight = edge_weight(graph, q, kind, &nodes[a], &nodes[b], relation, cfg)?;
        edges.push(SubEdge {
            a,
            b,
            kind,
            relation,
            weight,
        });
        Ok(())
    };
    for (i, node) in nodes.iter().enumerate() {
        match node {
            NodeKey::Turn(t) => {
                if let Some(j) = graph
                    .turn(t)
                    .and_then(|n| n.turn.segment_id.clone())
                    .and_then(|s| index(&NodeKey::Segment(s)))
                {
                    push(i, j, EdgeKind::Hierarchy, None)?;
                }
            }
            NodeKey::Entity(e) => {
                let entity = graph.entity(*e).expect("entity in graph");
                for t in &entity.turn_ids {
                    if let Some(j) = index(&NodeKey::Turn(t.clone())) {
                        push(i, j, EdgeKind::Mention, None)?;
                    }
                }
                for r in graph.relations_of_entity(*e) {
                    let rel = graph.relation(r).expect("relation in graph");
                    // Emit each relation once, from its subject.
                    if rel.subject != *e {
                        continue;
                    }
                    if let Some(j) = index(&NodeKey::Entity(rel.object)) {
                        push(i, j, EdgeKind::Relation, Some(r))?;
                    }
                }
            }
            NodeKey::Segment(_) => {}
        }
    }
    Ok(edges)
}

pub fn assemble_subgraph(
    graph: &MemoryGraph,
    seeds: &SeedSet,
    q: &QueryContext,
    cfg: &RetrievalConfig,
) -> Result<Subgraph, RetrievalError> {
    let nodes = subgraph_nodes(graph, seeds, cfg);
    let edges = induced_edges(graph, &q.query_embedding, &nodes, cfg)?;
    let seed_values = seed_values(graph, &q.query_embedding, &nodes)?;
    Ok(Subgraph {
        nodes,
        edges,
        seed_values,
    })
}

pub fn dw_pagerank(sub: &Subgraph, cfg: &RetrievalConfig) -> Result<ScoreVector, RetrievalError> {
    Ok(personalized_pagerank(
        sub.nodes.len(),
        &sub.edge_list(),
        &sub.seed_values,
        PageRankParams {
            damping: cfg.damping,
            tolerance: cfg.tolerance,
            max_iterations: cfg.max_iterations,
        },
    )?)
}

/// Turn nodes by descending score, ties by (session, turn), top m.
pub fn rank_turns(graph: &MemoryGraph, sub: &Subgraph, scores: &ScoreVector, cfg: &RetrievalConfig) -> Vec<RankedTurn> {
    let mut turns: Vec<(&TurnRef, f64)> = sub
        .nodes
        .iter()
        .zip(&scores.scores)
        .filter_map(|(n, s)| match n {
            NodeKey::Turn(t) => Some((t, *s)),
            _ => None,
        })
        .collect();
    turns.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    turns
        .into_iter()
        .take(cfg.top_m_turns)
        .map(|(t, score)| RankedTurn {
            turn: graph.turn(t).expect("turn in graph").turn.clone(),
            score,
        })
        .collect()
}

/// Every relation edge citing a ranked turn, ordered by its best citing rank
/// and then by edge id.
pub fn enrich_with_triplets(graph: &MemoryGraph, ranked: &[RankedTurn], cfg: &RetrievalConfig) -> Vec<TripletEvidence> {
    if cfg.disable_triplet_enrichment {
        return Vec::new();
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in ranked {
        for id in graph.relations_citing(&r.turn.turn_ref()) {
            if !seen.insert(id) {
                continue;
            }
            let rel = graph.relation(id).expect("relation in graph");
            out.push(TripletEvidence {
                edge_id: id,
                subject: graph.entity(rel.subject).expect("entity").name.clone(),
                relation: rel.relation.clone(),
                object: graph.entity(rel.object).expect("entity").name.clone(),
                description: rel.description.clone(),
                source_turns: rel.source_turns.iter().cloned().collect(),
            });
        }
    }
    out
}

/// Runs the whole retrieval for an already embedded query.
pub fn retrieve_with(
    graph: &MemoryGraph,
    q: &QueryContext,
    cfg: &RetrievalConfig,
) -> Result<RetrievalOutcome, RetrievalError> {
    cfg.validate()?;
    if q.query_embedding.dim() != graph.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: graph.dim(),
            right: q.query_embedding.dim(),
        }
        .into());
    }
    let seeds = seed_search(graph, q, cfg)?;
    let subgraph = assemble_subgraph(graph, &seeds, q, cfg)?;
    let start = Instant::now();
    let scores = dw_pagerank(&subgraph, cfg)?;
    let pagerank_ms = start.elapsed().as_secs_f64() * 1e3;
    let ranked_turns = rank_turns(graph, &subgraph, &scores, cfg);
    let triplets = enrich_with_triplets(graph, &ranked_turns, cfg);
    let bundle = EvidenceBundle {
        ranked_turns,
        triplets,
        subgraph_stats: subgraph.stats(&scores),
    };
    Ok(RetrievalOutcome {
        bundle,
        seeds,
        subgraph,
        scores,
        pagerank_ms,
    })
}

pub fn retrieve(
    graph: &MemoryGraph,
    embedder: &dyn Embedder,
    query: &str,
    cfg: &RetrievalConfig,
) -> Result<RetrievalOutcome, RetrievalError> {
    if graph.is_empty() {
        return Err(RetrievalError::EmptyGraph);
    }
    let q = QueryContext::new(query, embedder.embed(query)?)?;
    retrieve_with(graph, &q, cfg)
}

/// |gold ∩ subgraph turns| / |gold|; `None` for empty gold.
pub fn turn_coverage(subgraph_turns: &BTreeSet<TurnRef>, gold: &BTreeSet<TurnRef>) -> Option<f64> {
    if gold.is_empty() {
        return None;
    }
    Some(gold.intersection(subgraph_turns).count() as f64 / gold.len() as f64)
}

/// Per-node scores keyed by node, for display.
pub fn scored_nodes(sub: &Subgraph, scores: &ScoreVector) -> BTreeMap<NodeKey, f64> {
    sub.nodes.iter().cloned().zip(scores.scores.iter().copied()).collect()
}
