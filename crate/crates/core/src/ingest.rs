//! Session ingestion: segmentation, selective filtering, summarization,
//! triplet and entity extraction, then one transactional graph commit.
//!
//! Prompts number messages from 0 within their scope (the session for
//! segmentation, the segment for everything else). Parsed indices are
//! translated back to global turn refs before anything touches the graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder};
use crate::graph::store::MemoryStore;
use crate::graph::{GraphError, MemoryGraph, ResolvedTriplet};
use crate::llm::{
    CompletionResult, GatewayError, LlmGateway, RawEntityDesc, RawTriplet, StructuredOutputError, TemplateId,
};
use crate::model::{ModelError, SegmentId, SegmentRecord, SessionRecord, Turn, TurnRef};

pub const FALLBACK_SUMMARY_CHARS: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("session {0} is already ingested")]
    DuplicateSession(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl From<ModelError> for IngestError {
    fn from(e: ModelError) -> Self {
        IngestError::InvalidInput(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub disable_selective_filter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummaryReport {
    pub segment_id: SegmentId,
    pub members: usize,
    pub retained: usize,
    pub retained_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub session_id: String,
    pub turn_count: usize,
    pub segment_count: usize,
    pub retained_count: usize,
    pub retained_ratio: f64,
    pub segments: Vec<SegmentSummaryReport>,
    pub triplet_count: usize,
    pub relation_edges_touched: usize,
    pub entity_descriptions: usize,
    pub entities_touched: usize,
    pub new_entities: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub llm_calls: u64,
    pub structured_attempts: u64,
    pub structured_failures: u64,
    pub provider_errors: u64,
    /// Pipeline steps that fell back to their default output.
    pub fallbacks: Vec<String>,
}

/// Everything the language model produced for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentExtraction {
    pub record: SegmentRecord,
    pub triplets: Vec<RawTriplet>,
    pub entities: Vec<RawEntityDesc>,
}

/// Local tallies for one session run.
#[derive(Default)]
struct RunLog {
    input_tokens: u64,
    output_tokens: u64,
    calls: u64,
    attempts: u64,
    failures: u64,
    provider_errors: u64,
    fallbacks: Vec<String>,
}

impl RunLog {
    fn completion(&mut self, r: &Result<CompletionResult, GatewayError>) {
        match r {
            Ok(c) => {
                self.calls += 1;
                self.input_tokens += c.input_tokens;
                self.output_tokens += c.output_tokens;
            }
            Err(_) => self.provider_errors += 1,
        }
    }

    fn parsed<T>(&mut self, r: &Result<T, StructuredOutputError>) {
        self.attempts += 1;
        if r.is_err() {
            self.failures += 1;
        }
    }

    fn fallback(&mut self, what: String) {
        self.fallbacks.push(what);
    }
}

pub struct Ingestor<'a> {
    gateway: &'a LlmGateway,
    embedder: &'a dyn Embedder,
    options: IngestOptions,
}

fn message_lines(turns: &[&Turn], label: &str, indices: impl Iterator<Item = usize>) -> String {
    indices
        .map(|i| format!("{label} {i}: {}: {}", turns[i].speaker, turns[i].text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Text up to and including the first sentence terminator that ends a word.
pub fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_end = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
            if at_end {
                return &text[..i + c.len_utf8()];
            }
        }
    }
    text
}

/// First sentence of every turn, space-joined and cut to 512 characters.
pub fn fallback_summary(turns: &[&Turn]) -> String {
    let joined = turns
        .iter()
        .map(|t| first_sentence(&t.text))
        .collect::<Vec<_>>()
        .join(" ");
    joined.chars().take(FALLBACK_SUMMARY_CHARS).collect()
}

impl<'a> Ingestor<'a> {
    pub fn new(gateway: &'a LlmGateway, embedder: &'a dyn Embedder, options: IngestOptions) -> Self {
        Self {
            gateway,
            embedder,
            options,
        }
    }

    fn call(&self, log: &mut RunLog, session: &str, id: TemplateId, bindings: &[(&str, &str)]) -> Option<String> {
        let r = self.gateway.run(session, id, bindings);
        log.completion(&r);
        r.ok().map(|c| c.text)
    }

    fn counted<T>(&self, log: &mut RunLog, r: Result<T, StructuredOutputError>) -> Result<T, StructuredOutputError> {
        log.parsed(&r);
        self.gateway.track(r)
    }

    /// Partitions the session into segments of positions. Falls back to one
    /// segment spanning the session.
    pub fn segment_session(&self, turns: &[Turn]) -> Result<Vec<Vec<usize>>, IngestError> {
        self.segment_logged(&mut RunLog::default(), turns)
    }

    fn segment_logged(&self, log: &mut RunLog, turns: &[Turn]) -> Result<Vec<Vec<usize>>, IngestError> {
        if turns.is_empty() {
            return Err(IngestError::InvalidInput("empty session".into()));
        }
        let whole = vec![(0..turns.len()).collect::<Vec<_>>()];
        if turns.len() == 1 {
            return Ok(whole);
        }
        let refs: Vec<&Turn> = turns.iter().collect();
        let listing = message_lines(&refs, "Message", 0..turns.len());
        let session = &turns[0].session_id;
        let Some(text) = self.call(
            log,
            session,
            TemplateId::Segmentation,
            &[("numbered_messages_str", &listing)],
        ) else {
            log.fallback("segmentation: provider failure".into());
            return Ok(whole);
        };
        match self.counted(log, crate::llm::parse::parse_segment_indices(&text, turns.len())) {
            Ok(parts) => Ok(parts),
            Err(e) => {
                log.fallback(format!("segmentation: {e}"));
                Ok(whole)
            }
        }
    }

    /// Segment-local indices of the retained turns.
    pub fn filter_segment(&self, members: &[&Turn]) -> Vec<usize> {
        self.filter_logged(&mut RunLog::default(), members)
    }

    fn filter_logged(&self, log: &mut RunLog, members: &[&Turn]) -> Vec<usize> {
        let all: Vec<usize> = (0..members.len()).collect();
        if self.options.disable_selective_filter || members.is_empty() {
            return all;
        }
        let conv = members
            .iter()
            .enumerate()
            .map(|(i, t)| format!("[{i}] {}: {}", t.speaker, t.text))
            .collect::<Vec<_>>()
            .join("\n");
        let session = &members[0].session_id;
        let Some(text) = self.call(log, session, TemplateId::SelectiveFilter, &[("formatted_conv", &conv)]) else {
            log.fallback("selective filter: provider failure".into());
            return all;
        };
        match self.counted(log, crate::llm::parse::parse_index_array(&text, members.len())) {
            Ok(kept) => kept,
            Err(e) => {
                log.fallback(format!("selective filter: {e}"));
                all
            }
        }
    }

    pub fn summarize_segment(&self, members: &[&Turn]) -> Result<String, IngestError> {
        self.summarize_logged(&mut RunLog::default(), members)
    }

    fn summarize_logged(&self, log: &mut RunLog, members: &[&Turn]) -> Result<String, IngestError> {
        if members.is_empty() {
            return Err(IngestError::InvalidInput("empty segment".into()));
        }
        let content = members
            .iter()
            .map(|t| format!("{}: {}", t.speaker, t.text))
            .collect::<Vec<_>>()
            .join("\n");
        let session = &members[0].session_id;
        match self.call(
            log,
            session,
            TemplateId::SegmentSummary,
            &[("segment_content", &content)],
        ) {
            Some(text) if !text.trim().is_empty() => Ok(text.trim().to_string()),
            Some(_) => {
                log.fallback("summary: empty output".into());
                Ok(fallback_summary(members))
            }
            None => {
                log.fallback("summary: provider failure".into());
                Ok(fallback_summary(members))
            }
        }
    }

    /// Triplets citing segment-local indices, each within `retained`.
    pub fn extract_triplets(&self, members: &[&Turn], retained: &[usize]) -> Vec<RawTriplet> {
        self.triplets_logged(&mut RunLog::default(), members, retained)
    }

    fn triplets_logged(&self, log: &mut RunLog, members: &[&Turn], retained: &[usize]) -> Vec<RawTriplet> {
        if retained.is_empty() {
            return Vec::new();
        }
        let listing = message_lines(members, "Message", retained.iter().copied());
        let session = &members[0].session_id;
        let Some(text) = self.call(
            log,
            session,
            TemplateId::TripletExtraction,
            &[("segment_text", &listing)],
        ) else {
            log.fallback("triplets: provider failure".into());
            return Vec::new();
        };
        let valid: BTreeSet<usize> = retained.iter().copied().collect();
        self.counted(log, crate::llm::parse::parse_pipe_triplets(&text, &valid))
            .unwrap_or_else(|e| {
                log.fallback(format!("triplets: {e}"));
                Vec::new()
            })
    }

    /// Entity descriptions citing segment-local indices within `retained`.
    pub fn extract_entities(
        &self,
        members: &[&Turn],
        retained: &[usize],
        entity_list: &[String],
    ) -> Vec<RawEntityDesc> {
        self.entities_logged(&mut RunLog::default(), members, retained, entity_list)
    }

    fn entities_logged(
        &self,
        log: &mut RunLog,
        members: &[&Turn],
        retained: &[usize],
        entity_list: &[String],
    ) -> Vec<RawEntityDesc> {
        if retained.is_empty() || entity_list.is_empty() {
            return Vec::new();
        }
        let listing = message_lines(members, "Turn", retained.iter().copied());
        let names = entity_list.join(", ");
        let session = &members[0].session_id;
        let Some(text) = self.call(
            log,
            session,
            TemplateId::EntityDescription,
            &[("segment", &listing), ("entity_list", &names)],
        ) else {
            log.fallback("entity descriptions: provider failure".into());
            return Vec::new();
        };
        let valid: BTreeSet<usize> = retained.iter().copied().collect();
        self.counted(
            log,
            crate::llm::parse::parse_entity_descriptions(&text, entity_list, &valid),
        )
        .unwrap_or_else(|e| {
            log.fallback(format!("entity descriptions: {e}"));
            Vec::new()
        })
    }

    /// Runs every model-facing step for a session without touching a graph.
    fn extract(&self, log: &mut RunLog, turns: &[Turn]) -> Result<Vec<SegmentExtraction>, IngestError> {
        let session_id = turns[0].session_id.clone();
        let parts = self.segment_logged(log, turns)?;
        let mut out = Vec::with_capacity(parts.len());
        for (ordinal, part) in parts.iter().enumerate() {
            let members: Vec<&Turn> = part.iter().map(|&p| &turns[p]).collect();
            let retained = self.filter_logged(log, &members);
            let summary = self.summarize_logged(log, &members)?;
            let triplets = self.triplets_logged(log, &members, &retained);
            let mut entity_list: Vec<String> = Vec::new();
            let mut seen = BTreeSet::new();
            let speakers = retained.iter().map(|&i| members[i].speaker.as_str());
            let named = triplets.iter().flat_map(|t| [t.subject.as_str(), t.object.as_str()]);
            for name in named.chain(speakers) {
                if let Ok(norm) = crate::model::normalize_name(name) {
                    if seen.insert(norm) {
                        entity_list.push(name.trim().to_string());
                    }
                }
            }
            let entities = self.entities_logged(log, &members, &retained, &entity_list);
            let record = SegmentRecord::new(
                SegmentId::for_session(&session_id, ordinal),
                session_id.clone(),
                members.iter().map(|t| t.turn_id).collect(),
                retained.iter().map(|&i| members[i].turn_id).collect(),
                summary,
            )?;
            out.push(SegmentExtraction {
                record,
                triplets: rebase_triplets(triplets, &members),
                entities: rebase_entities(entities, &members),
            });
        }
        Ok(out)
    }

    /// Extracts and commits one session. Either the whole session lands in
    /// the graph or nothing does.
    pub fn ingest_session(&self, store: &MemoryStore, turns: &[Turn]) -> Result<IngestReport, IngestError> {
        if turns.is_empty() {
            return Err(IngestError::InvalidInput("empty session".into()));
        }
        let session_id = turns[0].session_id.clone();
        if let Some(t) = turns.iter().find(|t| t.session_id != session_id) {
            return Err(IngestError::InvalidInput(format!(
                "turn {} does not belong to session {session_id}",
                t.turn_ref()
            )));
        }
        let ids: BTreeSet<u32> = turns.iter().map(|t| t.turn_id).collect();
        if ids.len() != turns.len() || turns.windows(2).any(|w| w[0].turn_id >= w[1].turn_id) {
            return Err(IngestError::InvalidInput("turn ids must be strictly ascending".into()));
        }
        for t in turns {
            t.check()?;
        }
        if store.read().session_ids().contains(&session_id) {
            return Err(IngestError::DuplicateSession(session_id));
        }
        let mut log = RunLog::default();
        let extraction = self.extract(&mut log, turns)?;
        let by_id: BTreeMap<u32, &Turn> = turns.iter().map(|t| (t.turn_id, t)).collect();
        let report = store.transaction(|g| self.commit(g, &session_id, &by_id, &extraction))?;
        Ok(self.report(session_id, turns.len(), &extraction, report, log))
    }

    /// Extracts a session and applies it to a bare graph (no store).
    pub fn ingest_into(&self, graph: &mut MemoryGraph, turns: &[Turn]) -> Result<IngestReport, IngestError> {
        let store = MemoryStore::new(std::mem::replace(graph, MemoryGraph::new(graph.dim())));
        let r = self.ingest_session(&store, turns);
        *graph = (*store.read()).clone();
        r
    }

    pub fn ingest_record(&self, store: &MemoryStore, record: &SessionRecord) -> Result<IngestReport, IngestError> {
        self.ingest_session(store, &record.to_turns()?)
    }

    fn commit(
        &self,
        g: &mut MemoryGraph,
        session_id: &str,
        turns: &BTreeMap<u32, &Turn>,
        extraction: &[SegmentExtraction],
    ) -> Result<CommitCounts, IngestError> {
        if g.session_ids().contains(session_id) {
            return Err(IngestError::DuplicateSession(session_id.to_string()));
        }
        let summaries: Vec<&str> = extraction.iter().map(|s| s.record.summary.as_str()).collect();
        let summary_emb = self.embedder.embed_batch(&summaries)?;
        let retained: Vec<(&SegmentId, &Turn)> = extraction
            .iter()
            .flat_map(|s| {
                s.record
                    .retained_turns
                    .iter()
                    .map(move |id| (&s.record.segment_id, turns[id]))
            })
            .collect();
        let texts: Vec<&str> = retained.iter().map(|(_, t)| t.text.as_str()).collect();
        let turn_emb = if texts.is_empty() {
            Vec::new()
        } else {
            self.embedder.embed_batch(&texts)?
        };

        for (seg, e) in extraction.iter().zip(summary_emb) {
            g.add_segment(seg.record.clone(), e)?;
        }
        for ((seg, turn), e) in retained.iter().zip(turn_emb) {
            g.add_turn((*turn).clone(), e)?;
            g.link_hierarchy(&turn.turn_ref(), seg)?;
        }
        let entities_before = g.entities().len();
        let mut touched_entities = BTreeSet::new();
        let mut touched_edges = BTreeSet::new();
        for seg in extraction {
            for t in &seg.triplets {
                let resolved = ResolvedTriplet {
                    subject: t.subject.clone(),
                    relation: t.relation.clone(),
                    object: t.object.clone(),
                    source_turns: t.indices.iter().map(|&i| TurnRef::new(session_id, i as u32)).collect(),
                };
                let id = g.add_relation_edge(self.embedder, &resolved)?;
                let r = g.relation(id).expect("edge just stored");
                touched_entities.extend([r.subject, r.object]);
                touched_edges.insert(id);
            }
            for d in &seg.entities {
                let cites: BTreeSet<TurnRef> = d.indices.iter().map(|&i| TurnRef::new(session_id, i as u32)).collect();
                touched_entities.insert(g.upsert_entity(self.embedder, &d.name, &d.description, &cites)?);
            }
        }
        Ok(CommitCounts {
            relation_edges_touched: touched_edges.len(),
            entities_touched: touched_entities.len(),
            new_entities: g.entities().len() - entities_before,
        })
    }

    fn report(
        &self,
        session_id: String,
        turn_count: usize,
        extraction: &[SegmentExtraction],
        counts: CommitCounts,
        log: RunLog,
    ) -> IngestReport {
        let retained_count: usize = extraction.iter().map(|s| s.record.retained_turns.len()).sum();
        IngestReport {
            session_id,
            turn_count,
            segment_count: extraction.len(),
            retained_count,
            retained_ratio: retained_count as f64 / turn_count as f64,
            segments: extraction
                .iter()
                .map(|s| SegmentSummaryReport {
                    segment_id: s.record.segment_id.clone(),
                    members: s.record.member_turns.len(),
                    retained: s.record.retained_turns.len(),
                    retained_ratio: s.record.retained_ratio(),
                })
                .collect(),
            triplet_count: extraction.iter().map(|s| s.triplets.len()).sum(),
            relation_edges_touched: counts.relation_edges_touched,
            entity_descriptions: extraction.iter().map(|s| s.entities.len()).sum(),
            entities_touched: counts.entities_touched,
            new_entities: counts.new_entities,
            input_tokens: log.input_tokens,
            output_tokens: log.output_tokens,
            llm_calls: log.calls,
            structured_attempts: log.attempts,
            structured_failures: log.failures,
            provider_errors: log.provider_errors,
            fallbacks: log.fallbacks,
        }
    }
}

struct CommitCounts {
    relation_edges_touched: usize,
    entities_touched: usize,
    new_entities: usize,
}

/// Segment-local indices become the session-level turn ids of the members.
fn rebase_triplets(raw: Vec<RawTriplet>, members: &[&Turn]) -> Vec<RawTriplet> {
    raw.into_iter()
        .map(|mut t| {
            t.indices = t.indices.iter().map(|&i| members[i].turn_id as usize).collect();
            t
        })
        .collect()
}

fn rebase_entities(raw: Vec<RawEntityDesc>, members: &[&Turn]) -> Vec<RawEntityDesc> {
    raw.into_iter()
        .map(|mut d| {
            d.indices = d.indices.iter().map(|&i| members[i].turn_id as usize).collect();
            d
        })
        .collect()
}
