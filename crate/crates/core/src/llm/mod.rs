//! Boundary to chat-completion providers.
//!
//! [`LlmGateway`] renders prompt templates, calls the configured
//! [`ChatProvider`] with retries, and keeps the token and structured-output
//! accounting. All structured parsing that should count toward the error
//! rate goes through the gateway's `parse_*` wrappers.

pub mod mock;
pub mod offline;
pub mod parse;
pub mod templates;

#[cfg(feature = "http")]
pub mod http;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{FailureKind, RawEntityDesc, RawTriplet, StructuredOutputError};
pub use templates::{PromptInstance, TemplateError, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    /// Transport-level failure; worth retrying.
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    /// The provider answered with an error body.
    #[error("provider rejected request: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("provider unavailable after {attempts} attempts: {last}")]
    ProviderUnavailable { attempts: u32, last: String },
    #[error("provider rejected request: {0}")]
    ProviderRejected(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, prompt: &PromptInstance, temperature: f64) -> Result<CompletionResult, ProviderError>;

    /// Cheap reachability probe for health reporting.
    fn reachable(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTally {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls: u64,
}

impl TokenTally {
    fn add(&mut self, r: &CompletionResult) {
        self.input_tokens += r.input_tokens;
        self.output_tokens += r.output_tokens;
        self.calls += 1;
    }
}

/// Token tallies keyed by session plus structured-output counters.
#[derive(Debug, Default)]
pub struct GatewayAccounting {
    per_session: Mutex<BTreeMap<String, TokenTally>>,
    structured_attempts: AtomicU64,
    structured_failures: AtomicU64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccountingSnapshot {
    pub per_session: BTreeMap<String, TokenTally>,
    pub total: TokenTally,
    pub structured_attempts: u64,
    pub structured_failures: u64,
    pub error_rate: f64,
}

/// Tally key for calls made outside any session (queries, judging).
pub const UNSCOPED: &str = "";

impl GatewayAccounting {
    fn record_tokens(&self, session: &str, r: &CompletionResult) {
        self.per_session
            .lock()
            .expect("accounting lock poisoned")
            .entry(session.to_string())
            .or_default()
            .add(r);
    }

    pub fn record_attempt(&self, failed: bool) {
        self.structured_attempts.fetch_add(1, Ordering::SeqCst);
        if failed {
            self.structured_failures.fetch_add(1, Ordering::SeqCst);
        }
    }

    pub fn attempts(&self) -> u64 {
        self.structured_attempts.load(Ordering::SeqCst)
    }

    pub fn failures(&self) -> u64 {
        self.structured_failures.load(Ordering::SeqCst)
    }

    /// failures / max(attempts, 1)
    pub fn error_rate(&self) -> f64 {
        error_rate(self.failures(), self.attempts())
    }

    pub fn session(&self, session: &str) -> TokenTally {
        self.per_session
            .lock()
            .expect("accounting lock poisoned")
            .get(session)
            .copied()
            .unwrap_or_default()
    }

    pub fn snapshot(&self) -> AccountingSnapshot {
        let per_session = self.per_session.lock().expect("accounting lock poisoned").clone();
        let mut total = TokenTally::default();
        for t in per_session.values() {
            total.input_tokens += t.input_tokens;
            total.output_tokens += t.output_tokens;
            total.calls += t.calls;
        }
        let (a, f) = (self.attempts(), self.failures());
        AccountingSnapshot {
            per_session,
            total,
            structured_attempts: a,
            structured_failures: f,
            error_rate: error_rate(f, a),
        }
    }
}

pub fn error_rate(failures: u64, attempts: u64) -> f64 {
    failures as f64 / attempts.max(1) as f64
}

pub struct LlmGateway {
    provider: Arc<dyn ChatProvider>,
    retry: RetryPolicy,
    accounting: GatewayAccounting,
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self::with_retry(provider, RetryPolicy::default())
    }

    pub fn with_retry(provider: Arc<dyn ChatProvider>, retry: RetryPolicy) -> Self {
        Self {
            provider,
            retry,
            accounting: GatewayAccounting::default(),
        }
    }

    pub fn accounting(&self) -> &GatewayAccounting {
        &self.accounting
    }

    pub fn provider_reachable(&self) -> bool {
        self.provider.reachable()
    }

    pub fn error_rate(&self) -> f64 {
        self.accounting.error_rate()
    }

    pub fn complete(&self, prompt: &PromptInstance, temperature: f64) -> Result<CompletionResult, GatewayError> {
        self.complete_for(UNSCOPED, prompt, temperature)
    }

    /// Completes a prompt, attributing token usage to `session`. Transport
    /// failures are retried with exponential backoff; rejections are not.
    pub fn complete_for(
        &self,
        session: &str,
        prompt: &PromptInstance,
        temperature: f64,
    ) -> Result<CompletionResult, GatewayError> {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 && !self.retry.base_delay.is_zero() {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            match self.provider.complete(prompt, temperature) {
                Ok(r) => {
                    self.accounting.record_tokens(session, &r);
                    return Ok(r);
                }
                Err(ProviderError::Rejected(body)) => return Err(GatewayError::ProviderRejected(body)),
                Err(ProviderError::Unavailable(msg)) => last = msg,
            }
        }
        Err(GatewayError::ProviderUnavailable { attempts, last })
    }

    /// Renders a template and completes it at temperature 0.
    pub fn run(
        &self,
        session: &str,
        template: TemplateId,
        bindings: &[(&str, &str)],
    ) -> Result<CompletionResult, GatewayError> {
        let prompt = PromptInstance::render(template, bindings)?;
        self.complete_for(session, &prompt, 0.0)
    }

    /// Counts one structured attempt, and one failure if `result` is an error.
    pub fn track<T, E>(&self, result: Result<T, E>) -> Result<T, E> {
        self.accounting.record_attempt(result.is_err());
        result
    }

    pub fn parse_segment_indices(&self, text: &str, n: usize) -> Result<Vec<Vec<usize>>, StructuredOutputError> {
        self.track(parse::parse_segment_indices(text, n))
    }

    pub fn parse_index_array(&self, text: &str, n: usize) -> Result<Vec<usize>, StructuredOutputError> {
        self.track(parse::parse_index_array(text, n))
    }

    pub fn parse_pipe_triplets(
        &self,
        text: &str,
        valid: &BTreeSet<usize>,
    ) -> Result<Vec<RawTriplet>, StructuredOutputError> {
        self.track(parse::parse_pipe_triplets(text, valid))
    }

    pub fn parse_entity_descriptions(
        &self,
        text: &str,
        expected: &[String],
        valid: &BTreeSet<usize>,
    ) -> Result<Vec<RawEntityDesc>, StructuredOutputError> {
        self.track(parse::parse_entity_descriptions(text, expected, valid))
    }
}

/// Whitespace token count, used by the offline providers for usage figures.
pub fn rough_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
