use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cache::{request_key, ResponseCache};
use super::chat::{ChatBackend, ChatRequest};
use super::prompts::{PromptSet, PromptTemplate};
use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay_ms: 250, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy { max_retries: 0, base_delay_ms: 0, max_delay_ms: 0 }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// Runs `op` until it succeeds, fails permanently, or the policy is exhausted.
pub(crate) fn with_retries<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Result<T, LlmError>,
) -> Result<T, LlmError> {
    let mut attempt = 0;
    loop {
        match op() {
            Err(e) if e.is_retryable() && attempt < policy.max_retries => {
                tracing::warn!(attempt, error = %e, "retrying model call");
                std::thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Counting semaphore bounding in-flight backend requests.
#[derive(Debug)]
pub(crate) struct Gate {
    free: Mutex<usize>,
    cond: Condvar,
}

pub(crate) struct Permit<'a>(&'a Gate);

impl Gate {
    pub(crate) fn new(permits: usize) -> Self {
        Gate { free: Mutex::new(permits.max(1)), cond: Condvar::new() }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cond.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cond.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientSettings {
    pub chat_model: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for ClientSettings {
    fn default() -> Self {
        ClientSettings { chat_model: "scripted".into(), max_in_flight: 4, retry: RetryPolicy::default() }
    }
}

/// Chat access with prompt rendering, caching, retries and a concurrency
/// bound. Safe to share across threads.
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    prompts: PromptSet,
    cache: ResponseCache,
    settings: ClientSettings,
    gate: Gate,
    backend_calls: AtomicUsize,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("settings", &self.settings).finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, prompts: PromptSet, settings: ClientSettings) -> Self {
        let gate = Gate::new(settings.max_in_flight);
        LlmClient {
            backend,
            prompts,
            cache: ResponseCache::in_memory(),
            settings,
            gate,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn settings(&self) -> &ClientSettings {
        &self.settings
    }

    /// How many requests actually reached the backend (cache misses, retries
    /// included).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn model_for<'a>(&'a self, template: &'a PromptTemplate) -> &'a str {
        template.model.as_deref().unwrap_or(&self.settings.chat_model)
    }

    /// Renders the template `id` from the prompt set and sends it.
    pub fn chat(&self, id: &str, vars: &[(&str, &str)]) -> Result<String, LlmError> {
        let template = self.prompts.get(id)?;
        self.chat_template(template, vars)
    }

    /// Renders `template` (failing before any network traffic if a variable is
    /// missing) and sends it.
    pub fn chat_template(&self, template: &PromptTemplate, vars: &[(&str, &str)]) -> Result<String, LlmError> {
        let prompt = template.render(vars)?;
        self.complete(self.model_for(template), &prompt, template.temperature)
    }

    /// Sends an already rendered prompt, serving repeats from the cache.
    pub fn complete(&self, model: &str, prompt: &str, temperature: f32) -> Result<String, LlmError> {
        let key = request_key(model, prompt);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let request = ChatRequest { model, prompt, temperature };
        let reply = with_retries(&self.settings.retry, || {
            let _permit = self.gate.acquire();
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            self.backend.complete(&request)
        })?;
        self.cache.put(&key, &reply)?;
        Ok(reply)
    }
}
