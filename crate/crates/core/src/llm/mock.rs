//! Table-driven provider for tests and reproducible offline runs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use twox_hash::XxHash64;

use super::{rough_token_count, ChatProvider, CompletionResult, PromptInstance, ProviderError, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    Unavailable,
    Rejected(String),
}

impl MockReply {
    pub fn text(s: impl Into<String>) -> Self {
        MockReply::Text(s.into())
    }
}

type Handler = Box<dyn Fn(&PromptInstance) -> Option<MockReply> + Send + Sync>;

struct NeedleRule {
    template: TemplateId,
    needles: Vec<String>,
    reply: MockReply,
}

/// Resolution order: exact fingerprint, needle rules (first match wins),
/// handlers, per-template default. A prompt matching nothing is rejected.
#[derive(Default)]
pub struct MockProvider {
    exact: BTreeMap<(TemplateId, u64), MockReply>,
    rules: Vec<NeedleRule>,
    handlers: Vec<(TemplateId, Handler)>,
    defaults: BTreeMap<TemplateId, MockReply>,
    calls: AtomicU64,
    log: Mutex<Vec<TemplateId>>,
}

pub fn fingerprint(rendered_text: &str) -> u64 {
    XxHash64::oneshot(0, rendered_text.as_bytes())
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replies to the exact prompt `prompt`.
    pub fn with_exact(mut self, prompt: &PromptInstance, reply: MockReply) -> Self {
        self.exact
            .insert((prompt.template_id, fingerprint(&prompt.rendered_text)), reply);
        self
    }

    /// Replies to any prompt of `template` whose text contains every needle.
    pub fn with_rule<S: Into<String>>(
        mut self,
        template: TemplateId,
        needles: impl IntoIterator<Item = S>,
        reply: MockReply,
    ) -> Self {
        self.add_rule(template, needles, reply);
        self
    }

    pub fn add_rule<S: Into<String>>(
        &mut self,
        template: TemplateId,
        needles: impl IntoIterator<Item = S>,
        reply: MockReply,
    ) {
        self.rules.push(NeedleRule {
            template,
            needles: needles.into_iter().map(Into::into).collect(),
            reply,
        });
    }

    pub fn with_handler(
        mut self,
        template: TemplateId,
        f: impl Fn(&PromptInstance) -> Option<MockReply> + Send + Sync + 'static,
    ) -> Self {
        self.handlers.push((template, Box::new(f)));
        self
    }

    pub fn with_default(mut self, template: TemplateId, reply: MockReply) -> Self {
        self.defaults.insert(template, reply);
        self
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Templates in call order.
    pub fn calls(&self) -> Vec<TemplateId> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    fn resolve(&self, prompt: &PromptInstance) -> MockReply {
        let id = prompt.template_id;
        if let Some(r) = self.exact.get(&(id, fingerprint(&prompt.rendered_text))) {
            return r.clone();
        }
        if let Some(rule) = self
            .rules
            .iter()
            .find(|r| r.template == id && r.needles.iter().all(|n| prompt.rendered_text.contains(n.as_str())))
        {
            return rule.reply.clone();
        }
        for (t, h) in &self.handlers {
            if *t == id {
                if let Some(r) = h(prompt) {
                    return r;
                }
            }
        }
        self.defaults
            .get(&id)
            .cloned()
            .unwrap_or_else(|| MockReply::Rejected(format!("no mock reply for {id}")))
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, prompt: &PromptInstance, _temperature: f64) -> Result<CompletionResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("mock log poisoned").push(prompt.template_id);
        match self.resolve(prompt) {
            MockReply::Text(text) => Ok(CompletionResult {
                input_tokens: rough_token_count(&prompt.rendered_text),
                output_tokens: rough_token_count(&text),
                text,
            }),
            MockReply::Unavailable => Err(ProviderError::Unavailable("mock transport failure".into())),
            MockReply::Rejected(body) => Err(ProviderError::Rejected(body)),
        }
    }
}
