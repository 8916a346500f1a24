//! Query components and their matching against the cube.
//!
//! Each component is matched exactly first: its label's posting list on its
//! dimension. Only a component whose label is absent from that dimension
//! falls back to embedding similarity against the dimension's labels,
//! accepting labels with similarity at or above `tau`. Exact and semantic
//! hits both count the component as covered.

mod decompose;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::{normalize_dimension_name, CubeError, DocId, DocumentRecord, HypercubeIndex, Label};
use crate::llm::{cosine, Embedder, EmbeddingVector, LlmError};

pub use decompose::{decompose_query, fallback_decompose, parse_decomposition, Decomposer, MAX_NGRAM};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("no components")]
    NoComponents,
    #[error("invalid retrieval config: {0}")]
    Config(String),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error("embedding: {0}")]
    Embedding(#[source] LlmError),
    #[error("query decomposition failed ({0}); use fallback decomposition (--backend gazetteer) or pass --components")]
    Decomposition(#[source] LlmError),
}

/// One (dimension, label) piece of a decomposed query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawComponent")]
pub struct QueryComponent {
    pub dimension: String,
    pub content: Label,
}

#[derive(Deserialize)]
struct RawComponent {
    dimension: String,
    content: String,
}

impl TryFrom<RawComponent> for QueryComponent {
    type Error = String;

    fn try_from(raw: RawComponent) -> Result<Self, Self::Error> {
        QueryComponent::new(&raw.dimension, &raw.content)
            .ok_or_else(|| format!("component ({:?}, {:?}) is empty after normalization", raw.dimension, raw.content))
    }
}

impl QueryComponent {
    /// Normalizes both parts; `None` if either is empty afterwards.
    pub fn new(dimension: &str, content: &str) -> Option<Self> {
        Some(QueryComponent { dimension: normalize_dimension_name(dimension)?, content: Label::new(content)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub tau: f64,
    pub semantic_enabled: bool,
    pub exact_enabled: bool,
    pub disabled_dimensions: BTreeSet<String>,
}

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_TAU: f64 = 0.9;

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            top_k: DEFAULT_TOP_K,
            tau: DEFAULT_TAU,
            semantic_enabled: true,
            exact_enabled: true,
            disabled_dimensions: BTreeSet::new(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.top_k == 0 {
            return Err(RetrievalError::Config("top_k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(RetrievalError::Config(format!("tau {} is outside [0, 1]", self.tau)));
        }
        if !self.semantic_enabled && !self.exact_enabled {
            return Err(RetrievalError::Config("both matching strategies are disabled".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticHit {
    pub component: usize,
    pub label: Label,
    pub similarity: f64,
}

/// Match evidence for one candidate document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub doc_id: DocId,
    /// Indexes into the component list.
    pub covered: BTreeSet<usize>,
    /// Components whose own label the document carries.
    pub exact_score: u32,
    pub semantic_hits: Vec<SemanticHit>,
    /// Occurrence counts of every matched label in the document, summed.
    pub freq_sum: u64,
}

impl MatchResult {
    fn empty(doc_id: DocId) -> Self {
        MatchResult { doc_id, covered: BTreeSet::new(), exact_score: 0, semantic_hits: Vec::new(), freq_sum: 0 }
    }

    pub fn coverage(&self) -> usize {
        self.covered.len()
    }
}

/// Presence score: how many components' labels `doc` carries on their
/// dimension.
pub fn exact_score(doc: &DocumentRecord, components: &[QueryComponent]) -> u32 {
    components.iter().filter(|c| doc.has_label(&c.dimension, &c.content)).count() as u32
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalStats {
    /// Components considered after dimension ablation.
    pub active_components: usize,
    /// Components that fell back to embedding similarity.
    pub semantic_fallbacks: usize,
    pub postings_touched: usize,
    pub candidates: usize,
    /// Per-document score assemblies; equals `candidates`.
    pub score_computations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    /// Candidates in doc id order.
    pub matches: Vec<MatchResult>,
    /// Number of active components; the full-coverage target for ranking.
    pub n_components: usize,
    pub stats: RetrievalStats,
}

type LabelVectors = Arc<Vec<(Label, EmbeddingVector)>>;

/// Read-only matcher over one index. Label embeddings are computed per
/// dimension on first use and shared by later queries.
pub struct Retriever<'a> {
    index: &'a HypercubeIndex,
    embedder: &'a dyn Embedder,
    label_vectors: Mutex<HashMap<String, LabelVectors>>,
}

const EMBED_BATCH: usize = 256;

impl<'a> Retriever<'a> {
    pub fn new(index: &'a HypercubeIndex, embedder: &'a dyn Embedder) -> Self {
        Retriever { index, embedder, label_vectors: Mutex::default() }
    }

    pub fn index(&self) -> &'a HypercubeIndex {
        self.index
    }

    fn vectors(&self, dimension: &str) -> Result<LabelVectors, RetrievalError> {
        if let Some(v) = self.label_vectors.lock().expect("label vector lock").get(dimension) {
            return Ok(v.clone());
        }
        let labels: Vec<&Label> = self.index.vocabulary(dimension)?.map(|(l, _)| l).collect();
        let mut vectors = Vec::with_capacity(labels.len());
        for chunk in labels.chunks(EMBED_BATCH) {
            let texts: Vec<&str> = chunk.iter().map(|l| l.as_str()).collect();
            let embedded = self.embedder.embed(&texts).map_err(RetrievalError::Embedding)?;
            vectors.extend(chunk.iter().map(|l| (*l).clone()).zip(embedded));
        }
        let vectors = Arc::new(vectors);
        self.label_vectors.lock().expect("label vector lock").insert(dimension.to_string(), vectors.clone());
        Ok(vectors)
    }

    /// Labels on the component's dimension with similarity at least `tau`,
    /// most similar first, ties by label.
    pub fn semantic_match(&self, component: &QueryComponent, tau: f64) -> Result<Vec<(Label, f64)>, RetrievalError> {
        let vectors = self.vectors(&component.dimension)?;
        if vectors.is_empty() {
            return Ok(Vec::new());
        }
        let query = self.embedder.embed_one(component.content.as_str()).map_err(RetrievalError::Embedding)?;
        let mut hits: Vec<(Label, f64)> = vectors
            .iter()
            .map(|(label, v)| (label.clone(), cosine(&query, v)))
            .filter(|(_, sim)| *sim >= tau)
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(hits)
    }

    /// Gathers and scores every document reachable from the components.
    ///
    /// Only posting lists of matched labels are read; documents sharing no
    /// matched label are never scored.
    pub fn retrieve(
        &self,
        components: &[QueryComponent],
        config: &RetrievalConfig,
    ) -> Result<Retrieval, RetrievalError> {
        if components.is_empty() {
            return Err(RetrievalError::NoComponents);
        }
        config.validate()?;
        for c in components {
            if !self.index.has_dimension(&c.dimension) {
                return Err(CubeError::UnknownDimension {
                    name: c.dimension.clone(),
                    valid: self.index.dimension_names(),
                }
                .into());
            }
        }

        let mut stats = RetrievalStats::default();
        let mut partial: BTreeMap<DocId, MatchResult> = BTreeMap::new();
        for (i, c) in components.iter().enumerate() {
            if config.disabled_dimensions.contains(&c.dimension) {
                continue;
            }
            stats.active_components += 1;
            let exact = if config.exact_enabled { self.index.lookup(&c.dimension, &c.content)? } else { &[] };
            if !exact.is_empty() {
                stats.postings_touched += exact.len();
                for p in exact {
                    let m = partial.entry(p.doc_id.clone()).or_insert_with(|| MatchResult::empty(p.doc_id.clone()));
                    m.covered.insert(i);
                    m.exact_score += 1;
                    m.freq_sum += u64::from(p.count);
                }
            } else if config.semantic_enabled {
                stats.semantic_fallbacks += 1;
                for (label, similarity) in self.semantic_match(c, config.tau)? {
                    let postings = self.index.lookup(&c.dimension, &label)?;
                    stats.postings_touched += postings.len();
                    for p in postings {
                        let m = partial.entry(p.doc_id.clone()).or_insert_with(|| MatchResult::empty(p.doc_id.clone()));
                        m.covered.insert(i);
                        m.freq_sum += u64::from(p.count);
                        m.semantic_hits.push(SemanticHit { component: i, label: label.clone(), similarity });
                    }
                }
            }
        }

        let matches: Vec<MatchResult> = partial
            .into_values()
            .map(|mut m| {
                stats.score_computations += 1;
                m.semantic_hits.sort_by(|a, b| {
                    a.component
                        .cmp(&b.component)
                        .then(b.similarity.total_cmp(&a.similarity))
                        .then_with(|| a.label.cmp(&b.label))
                });
                m
            })
            .collect();
        stats.candidates = matches.len();
        Ok(Retrieval { matches, n_components: stats.active_components, stats })
    }
}
