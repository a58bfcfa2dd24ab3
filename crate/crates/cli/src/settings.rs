//! Runtime settings. Sources in increasing precedence: built-in defaults, a
//! config file (TOML, or JSON when the extension is `.json`), environment
//! variables, command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use tracemem_core::embed::{Embedder, HashEmbedder, DEFAULT_HASH_DIM};
use tracemem_core::llm::http::HttpChatProvider;
use tracemem_core::llm::offline::OfflineProvider;
use tracemem_core::llm::{ChatProvider, LlmGateway, RetryPolicy};
use tracemem_core::model::RetrievalConfig;

pub const DEFAULT_BIND: &str = "127.0.0.1:7878";
pub const DEFAULT_STORE: &str = "tracemem.memgraph.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    /// Rule-based stand-in that needs no network.
    #[default]
    Offline,
    /// OpenAI-style chat completions endpoint.
    Http,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    /// Feature-hashing embedder; deterministic and offline.
    #[default]
    Hash,
    /// OpenAI-style embeddings endpoint.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub kind: LlmKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub attempts: u32,
    pub retry_delay_ms: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            kind: LlmKind::Offline,
            endpoint: None,
            model: None,
            api_key: None,
            attempts: 3,
            retry_delay_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSettings {
    pub kind: EmbedderKind,
    /// Hash embedder width. Remote embedders report their own.
    pub dim: usize,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dim: DEFAULT_HASH_DIM,
            endpoint: None,
            model: None,
            api_key: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub bind: Option<String>,
    pub store: Option<PathBuf>,
    /// Static key required on mutating and query endpoints when set.
    pub api_key: Option<String>,
    pub llm: LlmSettings,
    pub embedder: EmbedderSettings,
    pub retrieval: RetrievalConfig,
}

impl Settings {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let json = path.extension().is_some_and(|e| e == "json");
        let parsed = if json {
            serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(&text))
                .map_err(|e| anyhow::anyhow!("{}: {}", e.path(), e.inner()))
        } else {
            serde_path_to_error::deserialize(toml::Deserializer::parse(&text)?)
                .map_err(|e| anyhow::anyhow!("{}: {}", e.path(), e.inner()))
        };
        parsed.with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn store_path(&self) -> PathBuf {
        self.store.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_STORE))
    }

    pub fn bind(&self) -> &str {
        self.bind.as_deref().unwrap_or(DEFAULT_BIND)
    }

    pub fn provider(&self) -> anyhow::Result<Arc<dyn ChatProvider>> {
        Ok(match self.llm.kind {
            LlmKind::Offline => Arc::new(OfflineProvider::new()),
            LlmKind::Http => {
                let Some(endpoint) = &self.llm.endpoint else {
                    bail!("llm.kind = \"http\" needs llm.endpoint (or TRACEMEM_LLM_ENDPOINT)");
                };
                let model = self.llm.model.clone().unwrap_or_else(|| "gpt-4o-mini".into());
                Arc::new(HttpChatProvider::new(endpoint.clone(), self.llm.api_key.clone(), model))
            }
        })
    }

    pub fn gateway(&self) -> anyhow::Result<LlmGateway> {
        Ok(LlmGateway::with_retry(
            self.provider()?,
            RetryPolicy {
                attempts: self.llm.attempts.max(1),
                base_delay: Duration::from_millis(self.llm.retry_delay_ms),
            },
        ))
    }

    pub fn embedder(&self) -> anyhow::Result<Arc<dyn Embedder>> {
        Ok(match self.embedder.kind {
            EmbedderKind::Hash => {
                if self.embedder.dim == 0 {
                    bail!("embedder.dim must be positive");
                }
                Arc::new(HashEmbedder::new(self.embedder.dim))
            }
            EmbedderKind::Remote => {
                let Some(endpoint) = &self.embedder.endpoint else {
                    bail!("embedder.kind = \"remote\" needs embedder.endpoint (or TRACEMEM_EMBED_ENDPOINT)");
                };
                let model = self
                    .embedder
                    .model
                    .clone()
                    .unwrap_or_else(|| "text-embedding-3-small".into());
                let remote = tracemem_core::embed::RemoteEmbedder::connect(
                    endpoint.clone(),
                    self.embedder.api_key.clone(),
                    model,
                )
                .context("connecting to the embedding endpoint")?;
                Arc::new(remote)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracemem.toml");
        std::fs::write(
            &path,
            "bind = \"0.0.0.0:9000\"\n[embedder]\ndim = 128\n[retrieval]\nk_seed = 4\nuniform_weights = true\n",
        )
        .unwrap();
        let s = Settings::load(&path).unwrap();
        assert_eq!(s.bind(), "0.0.0.0:9000");
        assert_eq!(s.embedder.dim, 128);
        assert_eq!(s.retrieval.k_seed, 4);
        assert!(s.retrieval.uniform_weights);
        assert_eq!(s.retrieval.damping, 0.85);
        assert_eq!(s.llm.kind, LlmKind::Offline);
    }

    #[test]
    fn json_file_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"llm": {"kind": "http", "endpoint": "http://x"}}"#).unwrap();
        assert_eq!(Settings::load(&path).unwrap().llm.kind, LlmKind::Http);
        std::fs::write(&path, r#"{"llm": {"kind": "http", "endpont": "http://x"}}"#).unwrap();
        let err = format!("{:#}", Settings::load(&path).unwrap_err());
        assert!(err.contains("llm"), "{err}");
    }

    #[test]
    fn retrieval_typos_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.toml");
        std::fs::write(&path, "[retrieval]\nuniform_weight = true\n").unwrap();
        let err = format!("{:#}", Settings::load(&path).unwrap_err());
        assert!(err.contains("retrieval") && err.contains("uniform_weight"), "{err}");
    }

    #[test]
    fn http_provider_needs_an_endpoint() {
        let s = Settings {
            llm: LlmSettings {
                kind: LlmKind::Http,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(s.provider().is_err());
    }
}
