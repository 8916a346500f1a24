//! Chat and embedding access: prompt templates, backends (HTTP, scripted,
//! toy), content-addressed caching, retries and a bound on in-flight
//! requests.

mod cache;
mod chat;
mod client;
mod embed;
#[cfg(feature = "http")]
mod http;
pub mod prompts;

use thiserror::Error;

pub use cache::{request_key, ResponseCache};
pub use chat::{ChatBackend, ChatRequest, NoChat, ScriptLine, ScriptedChat};
pub use client::{ClientSettings, LlmClient, RetryPolicy};
#[cfg(test)]
pub(crate) use embed::RAINFALL_RAIN;
pub use embed::{cosine, CachedEmbedder, Embedder, EmbeddingVector, ToyEmbedder, TOY_DIMENSION};
#[cfg(feature = "http")]
pub use http::{Endpoint, HttpChat, HttpEmbedder};
pub use prompts::{PromptSet, PromptTemplate};

#[derive(Debug, Clone, Error)]
pub enum LlmError {
    #[error("prompt variable {{{0}}} has no value")]
    MissingVariable(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("cache: {0}")]
    Io(String),
    #[error("unscripted prompt (hash {key})")]
    Unscripted { key: String },
    #[error("endpoint failure: {message}")]
    Endpoint { message: String, retryable: bool },
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("malformed {what}: {raw}")]
    Malformed { what: String, raw: String },
    #[error("embedding: {0}")]
    BadEmbedding(String),
    #[error("embed called with an empty batch")]
    EmptyBatch,
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Endpoint { retryable: true, .. })
    }
}
