use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cache::request_key;
use super::LlmError;

/// A fully rendered chat request.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub temperature: f32,
}

/// Something that turns a rendered prompt into a reply.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, LlmError>;
}

/// One line of a scripted-backend file.
///
/// `prompt_hash` is [`request_key`] of the model and rendered prompt. For
/// hand-written fixtures the raw `prompt` (and optionally `model`) may be
/// given instead and is hashed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub reply: String,
}

/// Canned replies keyed by request hash. Unknown prompts are an error, never
/// a guess.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChat {
    replies: HashMap<String, String>,
}

impl ScriptedChat {
    pub fn new() -> Self {
        ScriptedChat::default()
    }

    pub fn with_reply(mut self, model: &str, prompt: &str, reply: impl Into<String>) -> Self {
        self.insert(model, prompt, reply);
        self
    }

    pub fn insert(&mut self, model: &str, prompt: &str, reply: impl Into<String>) {
        self.replies.insert(request_key(model, prompt), reply.into());
    }

    pub fn insert_hash(&mut self, prompt_hash: impl Into<String>, reply: impl Into<String>) {
        self.replies.insert(prompt_hash.into(), reply.into());
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }

    /// Loads a JSONL script; lines carrying a raw `prompt` without `model` are
    /// hashed with `default_model`.
    pub fn load(path: &Path, default_model: &str) -> Result<ScriptedChat, LlmError> {
        let text = fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let mut script = ScriptedChat::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptLine = serde_json::from_str(line)
                .map_err(|e| LlmError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            match (entry.prompt_hash, entry.prompt) {
                (Some(hash), _) => script.insert_hash(hash, entry.reply),
                (None, Some(prompt)) => {
                    let model = entry.model.as_deref().unwrap_or(default_model);
                    script.insert(model, &prompt, entry.reply)
                }
                (None, None) => {
                    return Err(LlmError::Config(format!(
                        "{}:{}: script line needs prompt_hash or prompt",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        Ok(script)
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, LlmError> {
        let key = request_key(request.model, request.prompt);
        self.replies.get(&key).cloned().ok_or(LlmError::Unscripted { key })
    }
}

/// A backend that is not configured; every call fails without retrying.
#[derive(Debug, Clone, Default)]
pub struct NoChat;

impl ChatBackend for NoChat {
    fn complete(&self, _request: &ChatRequest<'_>) -> Result<String, LlmError> {
        Err(LlmError::Unavailable("no chat backend configured".into()))
    }
}
