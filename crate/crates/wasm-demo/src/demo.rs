//! Browser-side state: one engine on the offline provider and the hash
//! embedder, plus view types shaped for the page script.

use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use tracemem_core::embed::HashEmbedder;
use tracemem_core::ingest::IngestOptions;
use tracemem_core::llm::offline::OfflineProvider;
use tracemem_core::llm::RetryPolicy;
use tracemem_core::model::TurnRecord;
use tracemem_core::retrieval::{EdgeKind, NodeKey, RetrievalOutcome};
use tracemem_core::{Engine, GraphStats, LlmGateway, RetrievalConfig, SessionRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestView {
    pub session_id: String,
    pub turns: usize,
    pub segments: usize,
    pub retained: usize,
    pub triplets: usize,
    pub stats: GraphStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnView {
    pub id: String,
    pub speaker: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeView {
    pub id: String,
    /// `turn`, `segment` or `entity`.
    pub kind: &'static str,
    pub label: String,
    pub score: f64,
    pub seed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeView {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryView {
    pub label: String,
    pub ranked: Vec<TurnView>,
    pub facts: Vec<String>,
    pub nodes: Vec<NodeView>,
    pub edges: Vec<EdgeView>,
    pub iterations: usize,
    pub converged: bool,
    pub pagerank_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareView {
    pub dynamic: QueryView,
    pub uniform: QueryView,
    /// Turn ids ranked by both, in dynamic order.
    pub shared: Vec<String>,
}

pub struct Demo {
    engine: Engine,
    sessions: usize,
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}

/// Turns from `Speaker: text` lines. Blank lines are skipped.
pub fn parse_transcript(session_id: &str, text: &str) -> Result<SessionRecord, String> {
    let mut turns = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((speaker, said)) = line.split_once(':') else {
            return Err(format!("line {}: expected `Speaker: text`", n + 1));
        };
        let (speaker, said) = (speaker.trim(), said.trim());
        if speaker.is_empty() || said.is_empty() {
            return Err(format!("line {}: expected `Speaker: text`", n + 1));
        }
        turns.push(TurnRecord {
            speaker: speaker.to_string(),
            text: said.to_string(),
            timestamp: None,
        });
    }
    if turns.is_empty() {
        return Err("no turns".into());
    }
    Ok(SessionRecord {
        session_id: session_id.to_string(),
        date: None,
        turns,
    })
}

impl Demo {
    pub fn new() -> Self {
        let gateway = LlmGateway::with_retry(
            Arc::new(OfflineProvider::new()),
            RetryPolicy {
                attempts: 1,
                base_delay: Duration::ZERO,
            },
        );
        Self {
            engine: Engine::new(Arc::new(gateway), Arc::new(HashEmbedder::default())),
            sessions: 0,
        }
    }

    pub fn stats(&self) -> GraphStats {
        self.engine.stats()
    }

    /// Ingests a transcript as the next session (`s1`, `s2`, ...).
    pub fn ingest_transcript(&mut self, text: &str) -> Result<IngestView, String> {
        let id = format!("s{}", self.sessions + 1);
        let record = parse_transcript(&id, text)?;
        let r = self
            .engine
            .ingest(&record, IngestOptions::default())
            .map_err(|e| e.to_string())?;
        self.sessions += 1;
        Ok(IngestView {
            session_id: r.session_id,
            turns: r.turn_count,
            segments: r.segment_count,
            retained: r.retained_count,
            triplets: r.triplet_count,
            stats: self.engine.stats(),
        })
    }

    pub fn query(&self, query: &str, uniform: bool) -> Result<QueryView, String> {
        let cfg = RetrievalConfig {
            uniform_weights: uniform,
            ..Default::default()
        };
        let outcome = self.engine.retrieve(query, &cfg).map_err(|e| e.to_string())?;
        Ok(self.view(&cfg, outcome))
    }

    pub fn compare(&self, query: &str) -> Result<CompareView, String> {
        let dynamic = self.query(query, false)?;
        let uniform = self.query(query, true)?;
        let shared = dynamic
            .ranked
            .iter()
            .filter(|t| uniform.ranked.iter().any(|u| u.id == t.id))
            .map(|t| t.id.clone())
            .collect();
        Ok(CompareView {
            dynamic,
            uniform,
            shared,
        })
    }

    fn view(&self, cfg: &RetrievalConfig, o: RetrievalOutcome) -> QueryView {
        let graph = self.engine.graph();
        let nodes = o
            .subgraph
            .nodes
            .iter()
            .enumerate()
            .map(|(i, key)| {
                let (id, kind, label) = match key {
                    NodeKey::Turn(t) => {
                        let text = graph.turn(t).map(|n| n.turn.text.clone()).unwrap_or_default();
                        (format!("{}:{}", t.session_id, t.turn_id), "turn", text)
                    }
                    NodeKey::Segment(s) => {
                        let summary = graph.segment(s).map(|n| n.record.summary.clone()).unwrap_or_default();
                        (s.0.clone(), "segment", summary)
                    }
                    NodeKey::Entity(e) => {
                        let name = graph.entity(*e).map(|n| n.name.clone()).unwrap_or_default();
                        (format!("e{}", e.0), "entity", name)
                    }
                };
                NodeView {
                    id,
                    kind,
                    label,
                    score: o.scores.scores[i],
                    seed: o.subgraph.seed_values[i],
                }
            })
            .collect();
        let edges = o
            .subgraph
            .edges
            .iter()
            .map(|e| EdgeView {
                a: e.a,
                b: e.b,
                kind: e.kind,
                weight: e.weight,
            })
            .collect();
        let b = o.bundle;
        QueryView {
            label: cfg.label(),
            ranked: b
                .ranked_turns
                .iter()
                .map(|r| TurnView {
                    id: format!("{}:{}", r.turn.session_id, r.turn.turn_id),
                    speaker: r.turn.speaker.clone(),
                    text: r.turn.text.clone(),
                    score: r.score,
                })
                .collect(),
            facts: b
                .triplets
                .iter()
                .map(|t| format!("{} / {} / {}", t.subject, t.relation, t.object))
                .collect(),
            nodes,
            edges,
            iterations: b.subgraph_stats.iterations,
            converged: b.subgraph_stats.converged,
            pagerank_ms: o.pagerank_ms,
        }
    }
}
