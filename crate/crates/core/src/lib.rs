//! Hypercube retrieval: documents indexed by labels along named semantic
//! dimensions (location, event, theme, ...), queries decomposed into
//! per-dimension components, candidates gathered from the matching posting
//! lists and ranked by how many components they cover.
//!
//! Module map:
//!
//! - [`cube`]: dimension schemas, labelled documents, the inverted index and
//!   its on-disk format.
//! - [`extraction`]: per-dimension label extraction (gazetteer or LLM).
//! - [`builder`]: dimension discovery (entity pool, k-means, summarization,
//!   consolidation) and corpus indexing.
//! - [`retrieval`]: query decomposition, exact and embedding matching.
//! - [`ranking`]: coverage-tier ranking and explanations.
//! - [`llm`]: chat/embedding backends, prompt templates, caching.
//! - [`eval`]: BM25 and dense-scan baselines, metrics, judge, latency bench.
//! - [`synthetic`]: seeded random corpora for tests and benchmarks.

pub mod answer;
pub mod builder;
pub mod corpus;
pub mod cube;
pub mod eval;
pub mod exec;
pub mod extraction;
pub mod llm;
pub mod ranking;
pub mod retrieval;
pub mod synthetic;

pub use cube::{normalize_label, CubeCellRef, DimensionSchema, DocId, DocumentRecord, HypercubeIndex, Label, Posting};
pub use exec::Execution;
pub use ranking::{rank, RankedEntry, RankedList, Tier};
pub use retrieval::{MatchResult, QueryComponent, RetrievalConfig, Retriever};
