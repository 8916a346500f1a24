//! Dimension discovery and corpus indexing.
//!
//! Discovery runs four stages: untyped entity extraction into a pool,
//! k-means over entity embeddings, one LLM summary per cluster, and a
//! consolidation pass that merges summaries into the final dimensions. Each
//! stage can persist its output to an artifacts directory so an interrupted
//! run resumes where it stopped.
//!
//! Indexing extracts every dimension from every document and assembles the
//! [`HypercubeIndex`] from per-worker shards.

mod kmeans;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusDoc;
use crate::cube::{normalize_dimension_name, CubeError, DimensionSchema, DocId, DocumentRecord, HypercubeIndex, Label};
use crate::exec::Execution;
use crate::extraction::{ExtractionError, Extractor};
use crate::llm::prompts::{CONSOLIDATE, SUMMARIZE};
use crate::llm::{Embedder, LlmClient, LlmError, PromptSet};

pub use kmeans::{kmeans, KMeansOutcome, MAX_ITERATIONS};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SAMPLE_SIZE: usize = 30;
pub const DEFAULT_MAX_FAILURE_FRACTION: f64 = 0.05;

pub const POOL_FILE: &str = "entity_pool.json";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const CANDIDATES_FILE: &str = "candidates.json";
pub const CONSOLIDATION_FILE: &str = "consolidation.json";

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no dimensions to index")]
    NoDimensions,
    #[error("entity pool is empty; nothing to cluster")]
    EmptyPool,
    #[error("k = {k} is invalid for an entity pool of {pool} entities")]
    InvalidK { k: usize, pool: usize },
    #[error("no cluster could be summarized into a dimension candidate")]
    NoCandidates,
    #[error("embedding entities: {0}")]
    Embedding(#[source] LlmError),
    #[error("prompt: {0}")]
    Prompt(#[source] LlmError),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error("{} of {total} documents failed extraction (allowed fraction {allowed}); first failure: {}: {}",
        failures.len(), failures[0].doc_id, failures[0].error)]
    TooManyFailures { total: usize, allowed: f64, failures: Vec<FailedDoc> },
    #[error("{path}: {message}")]
    Artifact { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedDoc {
    pub doc_id: DocId,
    pub error: String,
}

impl FailedDoc {
    fn new(doc_id: &DocId, error: &ExtractionError) -> Self {
        FailedDoc { doc_id: doc_id.clone(), error: error.to_string() }
    }
}

/// Corpus-wide entity multiset from untyped extraction.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EntityPool {
    pub entities: BTreeMap<Label, u64>,
    pub failures: Vec<FailedDoc>,
}

impl EntityPool {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// Extracts untyped entities from every document. Documents whose
/// extraction fails are listed in [`EntityPool::failures`].
pub fn build_entity_pool(
    corpus: &[CorpusDoc],
    extractor: &dyn Extractor,
    exec: Execution,
) -> Result<EntityPool, BuildError> {
    if corpus.is_empty() {
        return Err(BuildError::EmptyCorpus);
    }
    let results = exec.map(corpus, |doc| extractor.extract_untyped(&doc.doc_id, &doc.text));
    let mut pool = EntityPool::default();
    for (doc, result) in corpus.iter().zip(results) {
        match result {
            Ok(labels) => {
                for (label, count) in labels {
                    *pool.entities.entry(label).or_insert(0) += u64::from(count);
                }
            }
            Err(e) => {
                tracing::warn!(doc = %doc.doc_id, error = %e, "entity extraction failed");
                pool.failures.push(FailedDoc::new(&doc.doc_id, &e));
            }
        }
    }
    Ok(pool)
}

/// k-means clustering of the pool's entity embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub k: usize,
    pub seed: u64,
    /// Pool entities in label order; `assignments[i]` is the cluster of
    /// `entities[i]`.
    pub entities: Vec<Label>,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    pub inertia: f64,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterSet {
    /// Members of cluster `c`, nearest to the centroid first.
    pub fn members(&self, c: usize) -> Vec<&Label> {
        let mut idx: Vec<usize> = (0..self.entities.len()).filter(|&i| self.assignments[i] == c).collect();
        idx.sort_by(|&a, &b| {
            self.distances[a].total_cmp(&self.distances[b]).then_with(|| self.entities[a].cmp(&self.entities[b]))
        });
        idx.into_iter().map(|i| &self.entities[i]).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

const EMBED_BATCH: usize = 256;

/// Embeds the pool's entities and clusters them into `k` groups.
pub fn cluster_entities(
    pool: &EntityPool,
    embedder: &dyn Embedder,
    k: usize,
    seed: u64,
) -> Result<ClusterSet, BuildError> {
    if pool.is_empty() {
        return Err(BuildError::EmptyPool);
    }
    if k == 0 || k > pool.len() {
        return Err(BuildError::InvalidK { k, pool: pool.len() });
    }
    let entities: Vec<Label> = pool.entities.keys().cloned().collect();
    let mut points = Vec::with_capacity(entities.len());
    for chunk in entities.chunks(EMBED_BATCH) {
        let texts: Vec<&str> = chunk.iter().map(Label::as_str).collect();
        for v in embedder.embed(&texts).map_err(BuildError::Embedding)? {
            points.push(v.values().iter().map(|&x| f64::from(x)).collect::<Vec<f64>>());
        }
    }
    let out = kmeans(&points, k, seed, MAX_ITERATIONS);
    Ok(ClusterSet {
        k,
        seed,
        entities,
        inertia: out.inertia(),
        assignments: out.assignments,
        centroids: out.centroids,
        distances: out.distances,
        inertia_history: out.inertia_history,
        iterations: out.iterations,
    })
}

/// One cluster's proposed dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionCandidate {
    pub cluster: usize,
    /// Normalized dimension name; `cluster_<id>` when unresolved.
    pub name: String,
    pub summary: String,
    pub representatives: Vec<Label>,
    /// The summary call failed or its reply could not be parsed.
    pub unresolved: bool,
}

#[derive(Deserialize)]
struct SummaryReply {
    name: String,
    #[serde(default)]
    summary: String,
}

/// The JSON value spanning the first `open` to the last `close` bracket,
/// tolerating prose or code fences around it.
fn json_span(reply: &str, open: char, close: char) -> Option<&str> {
    let start = reply.find(open)?;
    let end = reply.rfind(close)?;
    (end > start).then(|| &reply[start..=end])
}

fn parse_summary(reply: &str) -> Option<(String, String)> {
    let parsed: SummaryReply = serde_json::from_str(json_span(reply, '{', '}')?).ok()?;
    let name = normalize_dimension_name(&parsed.name)?;
    Some((name, parsed.summary.trim().to_string()))
}

/// Summarizes each non-empty cluster from up to `sample_size` members
/// nearest its centroid.
pub fn summarize_clusters(
    clusters: &ClusterSet,
    llm: &LlmClient,
    sample_size: usize,
    exec: Execution,
) -> Vec<DimensionCandidate> {
    let ids: Vec<usize> = (0..clusters.k).filter(|&c| clusters.sizes()[c] > 0).collect();
    exec.map(&ids, |&c| {
        let representatives: Vec<Label> = clusters.members(c).into_iter().take(sample_size.max(1)).cloned().collect();
        let listing: Vec<&str> = representatives.iter().map(Label::as_str).collect();
        let reply = llm.chat(SUMMARIZE, &[("entities", &listing.join("\n"))]);
        let parsed = match &reply {
            Ok(text) => parse_summary(text),
            Err(e) => {
                tracing::warn!(cluster = c, error = %e, "cluster summary failed");
                None
            }
        };
        match parsed {
            Some((name, summary)) => {
                DimensionCandidate { cluster: c, name, summary, representatives, unresolved: false }
            }
            None => DimensionCandidate {
                cluster: c,
                name: format!("cluster_{c}"),
                summary: String::new(),
                representatives,
                unresolved: true,
            },
        }
    })
}

/// Final dimension list with the candidate names each dimension absorbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consolidation {
    pub dimensions: Vec<DimensionSchema>,
    pub members: BTreeMap<String, Vec<String>>,
    /// The LLM merge was unavailable or invalid; candidates were only
    /// deduplicated by name.
    pub fallback: bool,
}

#[derive(Deserialize)]
struct MergedDimension {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    members: Vec<String>,
}

/// Braces in a description would read as placeholders in the prompt.
fn sanitize_description(text: &str) -> String {
    text.replace('{', "(").replace('}', ")")
}

fn schema(prompts: &PromptSet, name: &str, description: &str) -> Result<DimensionSchema, BuildError> {
    let description = sanitize_description(description);
    let prompt = prompts.dimension_prompt(name, &description).map_err(BuildError::Prompt)?;
    Ok(DimensionSchema::new(name, description, prompt)?)
}

fn parse_merge(reply: &str, candidates: usize) -> Option<Vec<(String, String, Vec<String>)>> {
    let merged: Vec<MergedDimension> = serde_json::from_str(json_span(reply, '[', ']')?).ok()?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for m in merged {
        let name = normalize_dimension_name(&m.name)?;
        if !seen.insert(name.clone()) {
            continue;
        }
        out.push((name, m.description.trim().to_string(), m.members));
    }
    (!out.is_empty() && out.len() <= candidates).then_some(out)
}

/// Merges resolved candidates into the final dimensions.
///
/// With a client, the consolidation prompt decides the merge. Without one,
/// or when its reply is unusable, candidates sharing a name collapse into
/// one dimension and [`Consolidation::fallback`] is set.
pub fn consolidate_dimensions(
    candidates: &[DimensionCandidate],
    llm: Option<&LlmClient>,
    prompts: &PromptSet,
) -> Result<Consolidation, BuildError> {
    let resolved: Vec<&DimensionCandidate> = candidates.iter().filter(|c| !c.unresolved).collect();
    if resolved.is_empty() {
        return Err(BuildError::NoCandidates);
    }
    if let Some(llm) = llm {
        let listing: Vec<String> = resolved.iter().map(|c| format!("{}: {}", c.name, c.summary)).collect();
        match llm.chat(CONSOLIDATE, &[("candidates", &listing.join("\n"))]) {
            Ok(reply) => match parse_merge(&reply, resolved.len()) {
                Some(merged) => {
                    let mut dimensions = Vec::new();
                    let mut members = BTreeMap::new();
                    for (name, description, absorbed) in merged {
                        dimensions.push(schema(prompts, &name, &description)?);
                        members.insert(name, absorbed);
                    }
                    return Ok(Consolidation { dimensions, members, fallback: false });
                }
                None => tracing::warn!("consolidation reply unusable; deduplicating candidates"),
            },
            Err(e) => tracing::warn!(error = %e, "consolidation call failed; deduplicating candidates"),
        }
    }
    let mut grouped: BTreeMap<&str, Vec<&DimensionCandidate>> = BTreeMap::new();
    let mut order = Vec::new();
    for c in &resolved {
        if !grouped.contains_key(c.name.as_str()) {
            order.push(c.name.as_str());
        }
        grouped.entry(c.name.as_str()).or_default().push(c);
    }
    let mut dimensions = Vec::new();
    let mut members = BTreeMap::new();
    for name in order {
        let group = &grouped[name];
        dimensions.push(schema(prompts, name, &group[0].summary)?);
        members.insert(name.to_string(), vec![name.to_string(); 1]);
    }
    Ok(Consolidation { dimensions, members, fallback: true })
}

#[derive(Debug, Clone)]
pub struct DiscoveryOptions {
    pub k: usize,
    pub seed: u64,
    pub sample_size: usize,
    /// Where stage outputs are written.
    pub artifacts: Option<PathBuf>,
    /// Reuse stage outputs already present in `artifacts`.
    pub resume: bool,
    pub exec: Execution,
}

impl Default for DiscoveryOptions {
    fn default() -> Self {
        DiscoveryOptions {
            k: DEFAULT_K,
            seed: DEFAULT_SEED,
            sample_size: DEFAULT_SAMPLE_SIZE,
            artifacts: None,
            resume: false,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub pool: EntityPool,
    pub clusters: ClusterSet,
    pub candidates: Vec<DimensionCandidate>,
    pub consolidation: Consolidation,
}

fn artifact_error(path: &Path, message: impl ToString) -> BuildError {
    BuildError::Artifact { path: path.display().to_string(), message: message.to_string() }
}

mod erased {
    use super::*;

    pub trait Save {
        fn save(&self, dir: &Path, file: &str) -> Result<(), BuildError>;
    }

    impl<T: Serialize> Save for T {
        fn save(&self, dir: &Path, file: &str) -> Result<(), BuildError> {
            write_artifact(dir, file, self)
        }
    }
}

fn write_artifact<T: Serialize + ?Sized>(dir: &Path, file: &str, value: &T) -> Result<(), BuildError> {
    fs::create_dir_all(dir).map_err(|e| artifact_error(dir, e))?;
    let path = dir.join(file);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| artifact_error(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| artifact_error(&path, e))
}

/// A stage output from a previous run, when resuming and the file exists.
fn reuse<T: for<'de> Deserialize<'de>>(dir: Option<&Path>, file: &str, fresh: bool) -> Result<Option<T>, BuildError> {
    let Some(dir) = dir.filter(|_| !fresh) else {
        return Ok(None);
    };
    let path = dir.join(file);
    match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| artifact_error(&path, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(artifact_error(&path, e)),
    }
}

/// Runs (or resumes) the discovery pipeline.
///
/// A stage is recomputed when its artifact is missing, when `resume` is off,
/// or when an earlier stage was recomputed. Cluster artifacts made with a
/// different `k` or seed are discarded.
pub fn discover_dimensions(
    corpus: &[CorpusDoc],
    extractor: &dyn Extractor,
    embedder: &dyn Embedder,
    llm: &LlmClient,
    opts: &DiscoveryOptions,
) -> Result<Discovery, BuildError> {
    let dir = opts.artifacts.as_deref();
    let mut fresh = !opts.resume;
    let save = |file: &str, value: &dyn erased::Save| match dir {
        Some(dir) => value.save(dir, file),
        None => Ok(()),
    };

    let pool = match reuse::<EntityPool>(dir, POOL_FILE, fresh)? {
        Some(pool) => pool,
        None => {
            fresh = true;
            let pool = build_entity_pool(corpus, extractor, opts.exec)?;
            tracing::info!(entities = pool.len(), failures = pool.failures.len(), "entity pool built");
            pool
        }
    };
    save(POOL_FILE, &pool)?;

    let clusters = match reuse::<ClusterSet>(dir, CLUSTERS_FILE, fresh)? {
        Some(c) if c.k == opts.k && c.seed == opts.seed => c,
        _ => {
            fresh = true;
            let c = cluster_entities(&pool, embedder, opts.k, opts.seed)?;
            tracing::info!(k = c.k, inertia = c.inertia, iterations = c.iterations, "entities clustered");
            c
        }
    };
    save(CLUSTERS_FILE, &clusters)?;

    let candidates = match reuse::<Vec<DimensionCandidate>>(dir, CANDIDATES_FILE, fresh)? {
        Some(c) => c,
        None => {
            fresh = true;
            summarize_clusters(&clusters, llm, opts.sample_size, opts.exec)
        }
    };
    save(CANDIDATES_FILE, &candidates)?;

    let consolidation = match reuse::<Consolidation>(dir, CONSOLIDATION_FILE, fresh)? {
        Some(c) => c,
        None => consolidate_dimensions(&candidates, Some(llm), llm.prompts())?,
    };
    save(CONSOLIDATION_FILE, &consolidation)?;

    Ok(Discovery { pool, clusters, candidates, consolidation })
}

#[derive(Debug, Clone, Copy)]
pub struct IndexOptions {
    /// Largest tolerated fraction of documents whose extraction fails.
    pub max_failure_fraction: f64,
    pub exec: Execution,
}

impl Default for IndexOptions {
    fn default() -> Self {
        IndexOptions { max_failure_fraction: DEFAULT_MAX_FAILURE_FRACTION, exec: Execution::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub documents: usize,
    pub indexed: usize,
    /// Skipped documents; they are absent from the index.
    pub failures: Vec<FailedDoc>,
    /// Distinct labels per dimension.
    pub vocabulary: BTreeMap<String, usize>,
}

fn extract_record(
    doc: &CorpusDoc,
    dimensions: &[DimensionSchema],
    extractor: &dyn Extractor,
) -> Result<DocumentRecord, ExtractionError> {
    let mut record = DocumentRecord::new(doc.doc_id.clone(), doc.text.clone());
    for dim in dimensions {
        let result = extractor.extract(&doc.doc_id, &doc.text, dim)?;
        for (label, count) in result.labels {
            if count > 0 {
                record.add_label(&dim.name, label, count);
            }
        }
    }
    Ok(record)
}

/// Extracts every dimension from every document and builds the index.
///
/// Documents are extracted and indexed into per-worker shards that are then
/// merged, so the result does not depend on corpus order or the execution
/// mode.
pub fn index_corpus(
    corpus: &[CorpusDoc],
    dimensions: &[DimensionSchema],
    extractor: &dyn Extractor,
    opts: IndexOptions,
) -> Result<(HypercubeIndex, BuildReport), BuildError> {
    if dimensions.is_empty() {
        return Err(BuildError::NoDimensions);
    }
    let empty = HypercubeIndex::new(dimensions.to_vec())?;
    let extracted = opts.exec.map(corpus, |doc| extract_record(doc, dimensions, extractor));

    let mut records = Vec::with_capacity(extracted.len());
    let mut failures = Vec::new();
    for (doc, result) in corpus.iter().zip(extracted) {
        match result {
            Ok(record) => records.push(record),
            Err(e) => {
                tracing::warn!(doc = %doc.doc_id, error = %e, "extraction failed; skipping document");
                failures.push(FailedDoc::new(&doc.doc_id, &e));
            }
        }
    }
    if !corpus.is_empty() && failures.len() as f64 > opts.max_failure_fraction * corpus.len() as f64 {
        return Err(BuildError::TooManyFailures { total: corpus.len(), allowed: opts.max_failure_fraction, failures });
    }

    let index = opts.exec.fold_reduce(
        &records,
        || Ok(empty.clone()),
        |shard: Result<HypercubeIndex, CubeError>, record| {
            let mut shard = shard?;
            shard.add_document(record.clone())?;
            Ok(shard)
        },
        |a, b| a?.merge(b?),
    )?;

    let vocabulary = dimensions
        .iter()
        .map(|d| Ok((d.name.clone(), index.vocabulary_size(&d.name)?)))
        .collect::<Result<_, CubeError>>()?;
    let report = BuildReport { documents: corpus.len(), indexed: index.len(), failures, vocabulary };
    Ok((index, report))
}
