//! `hypercube.toml` and the backend wiring it selects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use hypercube_rag::builder::{DEFAULT_K, DEFAULT_MAX_FAILURE_FRACTION, DEFAULT_SAMPLE_SIZE, DEFAULT_SEED};
use hypercube_rag::extraction::{Extractor, Gazetteer, GazetteerExtractor, LlmExtractor};
use hypercube_rag::llm::{
    ChatBackend, ClientSettings, Embedder, LlmClient, NoChat, PromptSet, ResponseCache, RetryPolicy, ScriptedChat,
    ToyEmbedder,
};
#[cfg(feature = "http")]
use hypercube_rag::llm::{Endpoint, HttpChat, HttpEmbedder};
use hypercube_rag::RetrievalConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Chat and extraction through an HTTP endpoint.
    Llm,
    /// Gazetteer extraction and vocabulary decomposition; no chat backend.
    #[default]
    Gazetteer,
    /// Canned chat replies from a script file.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    /// Chat endpoint base URL (OpenAI-compatible).
    pub endpoint: Option<String>,
    pub chat_model: String,
    /// Embedding endpoint; the offline trigram embedder when unset.
    pub embed_endpoint: Option<String>,
    pub embed_model: String,
    pub embed_dimension: usize,
    /// Environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for LlmSection {
    fn default() -> Self {
        let client = ClientSettings::default();
        LlmSection {
            endpoint: None,
            chat_model: client.chat_model,
            embed_endpoint: None,
            embed_model: "embedding".into(),
            embed_dimension: 1024,
            api_key_env: None,
            max_in_flight: client.max_in_flight,
            timeout_secs: 120,
            retry: client.retry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub k: usize,
    pub sample_size: usize,
    pub max_failure_fraction: f64,
}

impl Default for BuildSection {
    fn default() -> Self {
        BuildSection {
            k: DEFAULT_K,
            sample_size: DEFAULT_SAMPLE_SIZE,
            max_failure_fraction: DEFAULT_MAX_FAILURE_FRACTION,
        }
    }
}

/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub index_dir: PathBuf,
    pub corpus: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub backend: Backend,
    pub prompts: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    pub retrieval: RetrievalConfig,
    pub llm: LlmSection,
    pub build: BuildSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            index_dir: PathBuf::from("index"),
            corpus: None,
            schema: None,
            backend: Backend::default(),
            prompts: None,
            gazetteer: None,
            script: None,
            cache_dir: None,
            seed: DEFAULT_SEED,
            retrieval: RetrievalConfig::default(),
            llm: LlmSection::default(),
            build: BuildSection::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<AppConfig, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let mut config: AppConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.index_dir);
        for p in
            [&mut config.corpus, &mut config.schema, &mut config.prompts, &mut config.gazetteer, &mut config.script]
                .into_iter()
                .flatten()
        {
            resolve(base, p);
        }
        if let Some(p) = config.cache_dir.as_mut() {
            resolve(base, p);
        }
        Ok(config)
    }

    pub fn prompt_set(&self) -> Result<PromptSet, CliError> {
        match &self.prompts {
            Some(p) => PromptSet::load(p).map_err(|e| CliError::data(anyhow::Error::new(e).context("prompt file"))),
            None => Ok(PromptSet::default()),
        }
    }

    #[cfg(feature = "http")]
    fn endpoint(&self, url: &str) -> Endpoint {
        let mut endpoint = Endpoint { timeout_secs: self.llm.timeout_secs, ..Endpoint::new(url) };
        if let Some(var) = &self.llm.api_key_env {
            endpoint = endpoint.with_key_from_env(var);
        }
        endpoint
    }

    pub fn chat_backend(&self) -> Result<Arc<dyn ChatBackend>, CliError> {
        Ok(match self.backend {
            Backend::Gazetteer => Arc::new(NoChat),
            Backend::Scripted => {
                let path = self
                    .script
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("the scripted backend needs `script` in the config".into()))?;
                Arc::new(ScriptedChat::load(path, &self.llm.chat_model).map_err(|e| CliError::data(e.into()))?)
            }
            #[cfg(feature = "http")]
            Backend::Llm => {
                let url = self
                    .llm
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| CliError::Usage("the llm backend needs `llm.endpoint` in the config".into()))?;
                Arc::new(HttpChat::new(self.endpoint(url)))
            }
            #[cfg(not(feature = "http"))]
            Backend::Llm => return Err(CliError::Usage("built without the `http` feature".into())),
        })
    }

    pub fn llm_client(&self) -> Result<Arc<LlmClient>, CliError> {
        let settings = ClientSettings {
            chat_model: self.llm.chat_model.clone(),
            max_in_flight: self.llm.max_in_flight,
            retry: self.llm.retry,
        };
        let mut client = LlmClient::new(self.chat_backend()?, self.prompt_set()?, settings);
        if let Some(dir) = &self.cache_dir {
            let cache = ResponseCache::on_disk(dir).map_err(|e| CliError::data(e.into()))?;
            client = client.with_cache(cache);
        }
        Ok(Arc::new(client))
    }

    pub fn embedder(&self) -> Box<dyn Embedder> {
        #[cfg(not(feature = "http"))]
        if self.llm.embed_endpoint.is_some() {
            tracing::warn!("built without the `http` feature; using the offline embedder");
        }
        #[cfg(not(feature = "http"))]
        return Box::new(ToyEmbedder::default());
        #[cfg(feature = "http")]
        match &self.llm.embed_endpoint {
            Some(url) => Box::new(HttpEmbedder::new(
                self.endpoint(url),
                self.llm.embed_model.clone(),
                self.llm.embed_dimension,
                self.llm.retry,
                self.llm.max_in_flight,
            )),
            None => Box::new(ToyEmbedder::default()),
        }
    }

    fn gazetteer(&self) -> Result<Option<Gazetteer>, CliError> {
        self.gazetteer
            .as_ref()
            .map(|p| Gazetteer::load(p).with_context(|| format!("gazetteer {}", p.display())).map_err(CliError::data))
            .transpose()
    }

    /// Gazetteer extraction when a gazetteer is configured (required for the
    /// gazetteer backend), otherwise chat-backend extraction.
    pub fn extractor(&self, client: &Arc<LlmClient>) -> Result<Box<dyn Extractor>, CliError> {
        match (self.backend, self.gazetteer()?) {
            (_, Some(g)) => Ok(Box::new(GazetteerExtractor::new(g))),
            (Backend::Gazetteer, None) => {
                Err(CliError::Usage("the gazetteer backend needs `gazetteer` in the config".into()))
            }
            (_, None) => Ok(Box::new(LlmExtractor::new(Arc::clone(client)))),
        }
    }
}
