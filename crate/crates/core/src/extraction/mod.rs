//! Per-dimension label extraction.
//!
//! Two backends share the [`Extractor`] trait: a [`Gazetteer`] lexicon
//! (deterministic, offline) and an LLM prompted with the dimension's
//! extraction template ([`LlmExtractor`]).

mod gazetteer;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::{DimensionSchema, DocId, Label, LabelCounts, DOCUMENT_PLACEHOLDER};
use crate::llm::prompts::{self, fill};
use crate::llm::{LlmClient, LlmError};

pub use crate::cube::normalize_label;
pub(crate) use gazetteer::count_occurrences;
pub use gazetteer::{Gazetteer, GazetteerDimension};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("gazetteer: {0}")]
    Gazetteer(String),
    #[error("document {doc_id}, dimension {dimension}: {source}")]
    Backend {
        doc_id: DocId,
        dimension: String,
        #[source]
        source: LlmError,
    },
    #[error("document {doc_id}, dimension {dimension}: reply is not a JSON array of strings: {raw:?}")]
    Malformed { doc_id: DocId, dimension: String, raw: String },
}

impl ExtractionError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ExtractionError::Backend { source, .. } if source.is_retryable())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Llm,
    Gazetteer,
}

/// Labels found in one document along one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub doc_id: DocId,
    pub dimension: String,
    pub labels: LabelCounts,
    pub provenance: Provenance,
}

/// Dimension label name used for untyped (discovery) extraction.
pub const UNTYPED: &str = "entities";

pub trait Extractor: Send + Sync {
    fn provenance(&self) -> Provenance;

    fn extract(
        &self,
        doc_id: &DocId,
        text: &str,
        dimension: &DimensionSchema,
    ) -> Result<ExtractionResult, ExtractionError>;

    /// Entities of any kind, for the discovery entity pool.
    fn extract_untyped(&self, doc_id: &DocId, text: &str) -> Result<LabelCounts, ExtractionError>;
}

/// Gazetteer-backed extraction; counts are occurrence counts in the text.
#[derive(Debug, Clone)]
pub struct GazetteerExtractor {
    gazetteer: Gazetteer,
}

impl GazetteerExtractor {
    pub fn new(gazetteer: Gazetteer) -> Self {
        GazetteerExtractor { gazetteer }
    }

    pub fn gazetteer(&self) -> &Gazetteer {
        &self.gazetteer
    }
}

/// Counts whole-phrase occurrences of the gazetteer's phrases for `dimension`.
pub fn gazetteer_extract(text: &str, dimension: &str, gazetteer: &Gazetteer) -> LabelCounts {
    gazetteer.extract(text, dimension)
}

impl Extractor for GazetteerExtractor {
    fn provenance(&self) -> Provenance {
        Provenance::Gazetteer
    }

    fn extract(
        &self,
        doc_id: &DocId,
        text: &str,
        dimension: &DimensionSchema,
    ) -> Result<ExtractionResult, ExtractionError> {
        Ok(ExtractionResult {
            doc_id: doc_id.clone(),
            dimension: dimension.name.clone(),
            labels: self.gazetteer.extract(text, &dimension.name),
            provenance: Provenance::Gazetteer,
        })
    }

    fn extract_untyped(&self, _doc_id: &DocId, text: &str) -> Result<LabelCounts, ExtractionError> {
        let mut all = LabelCounts::new();
        for dimension in self.gazetteer.dimension_names() {
            for (label, count) in self.gazetteer.extract(text, dimension) {
                *all.entry(label).or_insert(0) += count;
            }
        }
        Ok(all)
    }
}

/// LLM-backed extraction. Replies must be exactly one JSON array of strings.
#[derive(Debug, Clone)]
pub struct LlmExtractor {
    client: Arc<LlmClient>,
}

impl LlmExtractor {
    pub fn new(client: Arc<LlmClient>) -> Self {
        LlmExtractor { client }
    }

    fn ask(&self, doc_id: &DocId, dimension: &str, prompt: &str) -> Result<String, ExtractionError> {
        let model = &self.client.settings().chat_model;
        self.client.complete(model, prompt, 0.0).map_err(|source| ExtractionError::Backend {
            doc_id: doc_id.clone(),
            dimension: dimension.to_string(),
            source,
        })
    }
}

/// Parses an extraction reply into label counts.
///
/// If the normalized list repeats a label, the repetitions are its count.
/// Otherwise each label is counted by its whole-phrase occurrences in the
/// document, with a floor of one.
pub fn labels_from_reply(
    doc_id: &DocId,
    dimension: &str,
    reply: &str,
    text: &str,
) -> Result<LabelCounts, ExtractionError> {
    let raw: Vec<String> = serde_json::from_str(reply.trim()).map_err(|_| ExtractionError::Malformed {
        doc_id: doc_id.clone(),
        dimension: dimension.to_string(),
        raw: reply.to_string(),
    })?;
    let mut tally: BTreeMap<Label, u32> = BTreeMap::new();
    for item in &raw {
        if let Some(label) = normalize_label(item) {
            *tally.entry(label).or_insert(0) += 1;
        }
    }
    if tally.values().any(|&c| c > 1) {
        return Ok(tally);
    }
    Ok(tally
        .into_keys()
        .map(|label| {
            let n = count_occurrences(text, &label).max(1);
            (label, n)
        })
        .collect())
}

impl Extractor for LlmExtractor {
    fn provenance(&self) -> Provenance {
        Provenance::Llm
    }

    fn extract(
        &self,
        doc_id: &DocId,
        text: &str,
        dimension: &DimensionSchema,
    ) -> Result<ExtractionResult, ExtractionError> {
        let prompt = dimension.prompt_template.replacen(DOCUMENT_PLACEHOLDER, text, 1);
        let reply = self.ask(doc_id, &dimension.name, &prompt)?;
        Ok(ExtractionResult {
            doc_id: doc_id.clone(),
            dimension: dimension.name.clone(),
            labels: labels_from_reply(doc_id, &dimension.name, &reply, text)?,
            provenance: Provenance::Llm,
        })
    }

    fn extract_untyped(&self, doc_id: &DocId, text: &str) -> Result<LabelCounts, ExtractionError> {
        let template = self.client.prompts().get(prompts::ENTITIES).map_err(|source| ExtractionError::Backend {
            doc_id: doc_id.clone(),
            dimension: UNTYPED.into(),
            source,
        })?;
        let prompt = fill(&template.text, &[("document", text)], true).map_err(|source| ExtractionError::Backend {
            doc_id: doc_id.clone(),
            dimension: UNTYPED.into(),
            source,
        })?;
        let reply = self.ask(doc_id, UNTYPED, &prompt)?;
        labels_from_reply(doc_id, UNTYPED, &reply, text)
    }
}

/// Extracts one document along one dimension.
pub fn extract_entities(
    doc_id: &DocId,
    text: &str,
    dimension: &DimensionSchema,
    backend: &dyn Extractor,
) -> Result<ExtractionResult, ExtractionError> {
    backend.extract(doc_id, text, dimension)
}
