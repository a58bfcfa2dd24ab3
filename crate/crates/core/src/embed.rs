//! Embedding interface, cosine similarity, and the providers behind it.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use twox_hash::XxHash64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("invalid embedding input: {0}")]
    InvalidInput(String),
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
}

/// Grid that normalized components are snapped to. Two raw vectors that
/// differ only by a positive factor land on the same grid point (barring a
/// component sitting within one ulp of a grid midpoint), which makes every
/// downstream similarity bit-identical under input rescaling.
const SNAP: f64 = 1.0 / (1u64 << 30) as f64;

/// Unit-L2 real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes a raw vector. Fails on empty, non-finite, or zero input.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self, EmbedError> {
        if raw.is_empty() {
            return Err(EmbedError::InvalidInput("empty vector".into()));
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::InvalidInput("non-finite component".into()));
        }
        let unit = normalized(&raw).ok_or_else(|| EmbedError::InvalidInput("zero vector".into()))?;
        let snapped: Vec<f64> = unit.iter().map(|x| (x / SNAP).round() * SNAP).collect();
        let values =
            normalized(&snapped).ok_or_else(|| EmbedError::InvalidInput("vector vanished after snapping".into()))?;
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> Result<f64, EmbedError> {
        cosine(self, other)
    }
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

pub const DEFAULT_HASH_DIM: usize = 384;
const HASH_SEED: u64 = 0x7e5c_a11e_d5ee_d001;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "did", "do", "does", "for", "from", "had", "has", "have",
    "how", "i", "i'm", "in", "is", "it", "its", "me", "my", "of", "on", "or", "so", "that", "the", "their", "them",
    "there", "they", "this", "to", "was", "we", "were", "what", "when", "where", "which", "who", "why", "with", "you",
    "your",
];

/// Lowercased alphanumeric tokens with stopwords removed. Falls back to the
/// unfiltered tokens when every token is a stopword.
pub fn content_tokens(text: &str) -> Vec<String> {
    let all: Vec<String> = text
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect();
    let kept: Vec<String> = all
        .iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .cloned()
        .collect();
    if kept.is_empty() {
        all
    } else {
        kept
    }
}

/// Deterministic offline embedder: bag-of-tokens feature hashing with
/// XxHash64 under a fixed seed, then L2 normalization.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hash embedder dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (XxHash64::oneshot(HASH_SEED, token.as_bytes()) % self.dim as u64) as usize
    }

    /// Unnormalized token-count vector.
    pub fn raw_counts(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EmbedError::InvalidInput("empty text".into()));
        }
        let mut tokens = content_tokens(trimmed);
        if tokens.is_empty() {
            tokens.push(trimmed.to_lowercase());
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            v[self.bucket(t)] += 1.0;
        }
        Ok(v)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        Embedding::from_raw(self.raw_counts(text)?)
    }
}

#[cfg(feature = "http")]
pub use remote::RemoteEmbedder;

#[cfg(feature = "http")]
mod remote {
    use super::*;
    use serde_json::json;

    /// Client for an OpenAI-style `/embeddings` endpoint.
    pub struct RemoteEmbedder {
        endpoint: String,
        api_key: Option<String>,
        model: String,
        dim: usize,
        agent: ureq::Agent,
    }

    impl RemoteEmbedder {
        /// Connects and records the provider's dimension with a probe request.
        pub fn connect(
            endpoint: impl Into<String>,
            api_key: Option<String>,
            model: impl Into<String>,
        ) -> Result<Self, EmbedError> {
            let mut this = Self {
                endpoint: endpoint.into(),
                api_key,
                model: model.into(),
                dim: 0,
                agent: ureq::AgentBuilder::new()
                    .timeout(std::time::Duration::from_secs(60))
                    .build(),
            };
            let probe = this.request(&["dimension probe"])?;
            this.dim = probe
                .first()
                .map(Vec::len)
                .ok_or_else(|| EmbedError::ProviderUnavailable("empty probe response".into()))?;
            Ok(this)
        }

        fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
            let mut req = self.agent.post(&self.endpoint);
            if let Some(key) = &self.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            let resp = req
                .send_json(json!({ "model": self.model, "input": texts }))
                .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
            let body: serde_json::Value = resp
                .into_json()
                .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
            let data = body["data"]
                .as_array()
                .ok_or_else(|| EmbedError::ProviderUnavailable("response has no data".into()))?;
            data.iter()
                .map(|item| {
                    item["embedding"]
                        .as_array()
                        .and_then(|xs| xs.iter().map(|x| x.as_f64()).collect::<Option<Vec<_>>>())
                        .ok_or_else(|| EmbedError::ProviderUnavailable("malformed embedding".into()))
                })
                .collect()
        }
    }

    impl Embedder for RemoteEmbedder {
        fn dim(&self) -> usize {
            self.dim
        }

        fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
            Ok(self.embed_batch(&[text])?.remove(0))
        }

        fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
            if texts.iter().any(|t| t.trim().is_empty()) {
                return Err(EmbedError::InvalidInput("empty text".into()));
            }
            let raw = self.request(texts)?;
            if raw.len() != texts.len() {
                return Err(EmbedError::ProviderUnavailable(format!(
                    "expected {} vectors, got {}",
                    texts.len(),
                    raw.len()
                )));
            }
            raw.into_iter()
                .map(|v| {
                    if v.len() != self.dim {
                        return Err(EmbedError::DimensionMismatch {
                            left: self.dim,
                            right: v.len(),
                        });
                    }
                    Embedding::from_raw(v)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: &[f64]) -> Embedding {
        Embedding::from_raw(v.to_vec()).unwrap()
    }

    #[test]
    fn embed_is_deterministic_and_unit() {
        let e = HashEmbedder::default();
        let a = e.embed("I adopted a dog named Biscuit").unwrap();
        let b = e.embed("I adopted a dog named Biscuit").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_eq!(a.dim(), DEFAULT_HASH_DIM);
    }

    #[test]
    fn empty_text_rejected() {
        let e = HashEmbedder::default();
        assert!(matches!(e.embed("   "), Err(EmbedError::InvalidInput(_))));
    }

    #[test]
    fn token_overlap_beats_disjoint() {
        let e = HashEmbedder::default();
        let alpha = e.embed("alpha").unwrap();
        let alpha_beta = e.embed("alpha beta").unwrap();
        let zeta = e.embed("zeta").unwrap();
        // Direct computation: "alpha" shares one of two tokens with "alpha beta".
        let expected = if e.bucket("alpha") == e.bucket("beta") {
            1.0
        } else {
            1.0 / 2f64.sqrt()
        };
        let got = cosine(&alpha, &alpha_beta).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert_ne!(e.bucket("alpha"), e.bucket("zeta"));
        assert_eq!(cosine(&alpha, &zeta).unwrap(), 0.0);
        assert!(got > cosine(&alpha, &zeta).unwrap());
    }

    #[test]
    fn cosine_basics() {
        let a = unit(&[1.0, 0.0, 0.0]);
        let b = unit(&[0.0, 1.0, 0.0]);
        let neg = unit(&[-1.0, 0.0, 0.0]);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        assert_eq!(cosine(&a, &neg).unwrap(), -1.0);
        let c = unit(&[0.3, -0.2, 0.9]);
        assert!((cosine(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            cosine(&a, &b),
            Err(EmbedError::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(Embedding::from_raw(vec![0.0; 4]).is_err());
        assert!(Embedding::from_raw(vec![]).is_err());
        assert!(Embedding::from_raw(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn stopword_only_text_still_embeds() {
        let e = HashEmbedder::default();
        let v = e.embed("what is the").unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-9);
        let punct = e.embed("?!").unwrap();
        assert!((punct.norm() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(
            a in proptest::collection::vec(-10.0f64..10.0, 8),
            b in proptest::collection::vec(-10.0f64..10.0, 8),
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let (ea, eb) = (unit(&a), unit(&b));
            let ab = cosine(&ea, &eb).unwrap();
            let ba = cosine(&eb, &ea).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ea.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn positive_rescaling_is_invisible(
            a in proptest::collection::vec(-10.0f64..10.0, 16),
            b in proptest::collection::vec(-10.0f64..10.0, 16),
            scale in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
            let c1 = cosine(&unit(&a), &unit(&b)).unwrap();
            let c2 = cosine(&unit(&scaled), &unit(&b)).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-9);
        }

        // Texts built from a random vocabulary: a text sharing a token with
        // `base` is strictly closer to it than an equal-length disjoint text,
        // whenever the disjoint text's tokens do not hash into base's buckets.
        #[test]
        fn shared_tokens_beat_disjoint(
            vocab in proptest::collection::btree_set("[a-z]{4,9}", 9..=9),
        ) {
            let words: Vec<String> = vocab.into_iter().filter(|w| !STOPWORDS.contains(&w.as_str())).collect();
            prop_assume!(words.len() == 9);
            let e = HashEmbedder::default();
            let base = words[0..3].join(" ");
            let sharing = format!("{} {} {}", words[0], words[3], words[4]);
            let disjoint = words[5..8].join(" ");
            let base_buckets: std::collections::BTreeSet<usize> =
                words[0..3].iter().map(|w| e.bucket(w)).collect();
            prop_assume!(words[5..8].iter().all(|w| !base_buckets.contains(&e.bucket(w))));
            let b = e.embed(&base).unwrap();
            let s = cosine(&b, &e.embed(&sharing).unwrap()).unwrap();
            let d = cosine(&b, &e.embed(&disjoint).unwrap()).unwrap();
            prop_assert!(s > d, "sharing {s} vs disjoint {d}");
        }
    }
}
