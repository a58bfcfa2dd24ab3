//! Conversational memory as a heterogeneous graph of turns, topic segments
//! and entities, queried with query-conditioned personalized PageRank.
//!
//! Sessions go in through [`ingest::Ingestor`], which segments, filters,
//! summarizes and extracts triplets via an [`llm::LlmGateway`]. Questions come
//! back out through [`retrieval::retrieve`] as an [`model::EvidenceBundle`].
//! [`engine::Engine`] wires both around a shared [`graph::store::MemoryStore`].

pub mod answer;
pub mod embed;
pub mod engine;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod llm;
pub mod model;
pub mod retrieval;

pub use embed::{Embedder, Embedding, HashEmbedder};
pub use engine::{Engine, EngineError};
pub use graph::{GraphStats, MemoryGraph};
pub use llm::LlmGateway;
pub use model::{EvidenceBundle, RetrievalConfig, SessionRecord, TurnRef};
