//! Client for OpenAI-style `/chat/completions` endpoints.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, CompletionResult, PromptInstance, ProviderError};

pub struct HttpChatProvider {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpChatProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
        }
    }
}

fn parse_response(body: &Value) -> Result<CompletionResult, ProviderError> {
    let text = body["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| ProviderError::Rejected(format!("response has no message content: {body}")))?;
    let usage = &body["usage"];
    Ok(CompletionResult {
        text: text.to_string(),
        input_tokens: usage["prompt_tokens"].as_u64().unwrap_or(0),
        output_tokens: usage["completion_tokens"].as_u64().unwrap_or(0),
    })
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, prompt: &PromptInstance, temperature: f64) -> Result<CompletionResult, ProviderError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let payload = json!({
            "model": self.model,
            "temperature": temperature,
            "messages": [{ "role": "user", "content": prompt.rendered_text }],
        });
        match req.send_json(payload) {
            Ok(resp) => {
                let body: Value = resp
                    .into_json()
                    .map_err(|e| ProviderError::Unavailable(format!("unreadable body: {e}")))?;
                parse_response(&body)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                if code == 429 || code >= 500 {
                    Err(ProviderError::Unavailable(format!("status {code}: {body}")))
                } else {
                    Err(ProviderError::Rejected(format!("status {code}: {body}")))
                }
            }
            Err(e) => Err(ProviderError::Unavailable(e.to_string())),
        }
    }

    fn reachable(&self) -> bool {
        // Any HTTP answer, even an error status, proves the endpoint is up.
        match self.agent.get(&self.endpoint).timeout(Duration::from_secs(3)).call() {
            Ok(_) | Err(ureq::Error::Status(..)) => true,
            Err(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::TemplateId;

    #[test]
    fn reads_content_and_usage() {
        let body = json!({
            "choices": [{ "message": { "role": "assistant", "content": "[[0,1],[2]]" } }],
            "usage": { "prompt_tokens": 12, "completion_tokens": 5 }
        });
        let r = parse_response(&body).unwrap();
        assert_eq!(r.text, "[[0,1],[2]]");
        assert_eq!((r.input_tokens, r.output_tokens), (12, 5));
    }

    #[test]
    fn missing_content_is_rejected() {
        assert!(matches!(
            parse_response(&json!({"error": "x"})),
            Err(ProviderError::Rejected(_))
        ));
    }

    #[test]
    fn unreachable_endpoint_is_unavailable() {
        let p = HttpChatProvider::new("http://127.0.0.1:9/v1/chat/completions", None, "m");
        let prompt = PromptInstance::render(TemplateId::SegmentSummary, &[("segment_content", "x")]).unwrap();
        assert!(matches!(p.complete(&prompt, 0.0), Err(ProviderError::Unavailable(_))));
        assert!(!p.reachable());
    }
}
