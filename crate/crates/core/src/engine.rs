//! One memory graph plus the providers that feed and query it.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::answer::{self, AnswerError};
use crate::embed::Embedder;
use crate::graph::snapshot::{self, SnapshotError};
use crate::graph::store::MemoryStore;
use crate::graph::{GraphStats, MemoryGraph};
use crate::ingest::{IngestError, IngestOptions, IngestReport, Ingestor};
use crate::llm::LlmGateway;
use crate::model::{EvidenceBundle, RetrievalConfig, SessionRecord};
use crate::retrieval::{self, RetrievalError, RetrievalOutcome};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("snapshot dimension {found} does not match the embedder ({expected})")]
    DimensionMismatch { expected: usize, found: usize },
}

pub struct Engine {
    gateway: Arc<LlmGateway>,
    embedder: Arc<dyn Embedder>,
    store: MemoryStore,
}

impl Engine {
    pub fn new(gateway: Arc<LlmGateway>, embedder: Arc<dyn Embedder>) -> Self {
        let dim = embedder.dim();
        Self {
            gateway,
            embedder,
            store: MemoryStore::new(MemoryGraph::new(dim)),
        }
    }

    pub fn gateway(&self) -> &LlmGateway {
        &self.gateway
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    /// Read lease on the committed graph.
    pub fn graph(&self) -> Arc<MemoryGraph> {
        self.store.read()
    }

    pub fn stats(&self) -> GraphStats {
        self.store.read().stats()
    }

    pub fn ingest(&self, session: &SessionRecord, options: IngestOptions) -> Result<IngestReport, EngineError> {
        let ingestor = Ingestor::new(&self.gateway, self.embedder.as_ref(), options);
        Ok(ingestor.ingest_record(&self.store, session)?)
    }

    pub fn retrieve(&self, query: &str, cfg: &RetrievalConfig) -> Result<RetrievalOutcome, EngineError> {
        let graph = self.store.read();
        Ok(retrieval::retrieve(&graph, self.embedder.as_ref(), query, cfg)?)
    }

    pub fn answer(&self, query: &str, bundle: &EvidenceBundle) -> Result<String, EngineError> {
        Ok(answer::answer(&self.gateway, query, bundle)?)
    }

    pub fn judge(&self, question: &str, reference: &str, response: &str) -> Result<bool, EngineError> {
        Ok(answer::judge(&self.gateway, question, reference, response)?)
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<(), EngineError> {
        Ok(snapshot::save(&self.store.read(), path)?)
    }

    pub fn load_snapshot(&self, path: &Path) -> Result<GraphStats, EngineError> {
        let graph = snapshot::load(path)?;
        self.install(graph)
    }

    /// Replaces the graph, provided it was built with this embedder's dimension.
    pub fn install(&self, graph: MemoryGraph) -> Result<GraphStats, EngineError> {
        if graph.dim() != self.embedder.dim() {
            return Err(EngineError::DimensionMismatch {
                expected: self.embedder.dim(),
                found: graph.dim(),
            });
        }
        let stats = graph.stats();
        self.store.replace(graph);
        Ok(stats)
    }
}
