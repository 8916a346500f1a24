//! OpenAI-compatible `/chat/completions` and `/embeddings` endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::chat::{ChatBackend, ChatRequest};
use super::client::{with_retries, Gate, RetryPolicy};
use super::embed::{Embedder, EmbeddingVector};
use super::LlmError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub url: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Endpoint { url: url.into(), api_key: None, timeout_secs: default_timeout() }
    }

    /// Reads the API key from the named environment variable, if set.
    pub fn with_key_from_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(self.timeout_secs))).build().into()
    }

    fn post<T: for<'de> Deserialize<'de>>(
        &self,
        agent: &ureq::Agent,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<T, LlmError> {
        let url = format!("{}/{path}", self.url.trim_end_matches('/'));
        let mut request = agent.post(&url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body) {
            Ok(mut response) => response
                .body_mut()
                .read_json::<T>()
                .map_err(|e| LlmError::Malformed { what: format!("{path} response"), raw: e.to_string() }),
            Err(ureq::Error::StatusCode(code)) => Err(LlmError::Endpoint {
                message: format!("{url} returned HTTP {code}"),
                retryable: code == 429 || code >= 500,
            }),
            Err(e) => Err(LlmError::Endpoint { message: format!("{url}: {e}"), retryable: true }),
        }
    }
}

pub struct HttpChat {
    endpoint: Endpoint,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(endpoint: Endpoint) -> Self {
        let agent = endpoint.agent();
        HttpChat { endpoint, agent }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl ChatBackend for HttpChat {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, LlmError> {
        let body = json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let response: ChatResponse = self.endpoint.post(&self.agent, "chat/completions", &body)?;
        response.choices.into_iter().next().and_then(|c| c.message.content).ok_or_else(|| LlmError::Malformed {
            what: "chat completion".into(),
            raw: "response carried no message content".into(),
        })
    }
}

/// Remote embedder; vectors are re-normalized on arrival.
pub struct HttpEmbedder {
    endpoint: Endpoint,
    agent: ureq::Agent,
    model: String,
    dimension: usize,
    retry: RetryPolicy,
    gate: Gate,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: Endpoint,
        model: impl Into<String>,
        dimension: usize,
        retry: RetryPolicy,
        max_in_flight: usize,
    ) -> Self {
        let agent = endpoint.agent();
        HttpEmbedder { endpoint, agent, model: model.into(), dimension, retry, gate: Gate::new(max_in_flight) }
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::EmptyBatch);
        }
        let body = json!({"model": self.model, "input": texts});
        let mut response: EmbeddingResponse = with_retries(&self.retry, || {
            let _permit = self.gate.acquire();
            self.endpoint.post(&self.agent, "embeddings", &body)
        })?;
        if response.data.len() != texts.len() {
            return Err(LlmError::BadEmbedding(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                response.data.len()
            )));
        }
        response.data.sort_by_key(|d| d.index);
        response
            .data
            .iter()
            .map(|d| {
                if d.embedding.len() != self.dimension {
                    return Err(LlmError::BadEmbedding(format!(
                        "expected dimension {}, got {}",
                        self.dimension,
                        d.embedding.len()
                    )));
                }
                EmbeddingVector::normalized(&d.embedding)
            })
            .collect()
    }
}
