//! Baselines (BM25, dense scan), metrics, LLM judge, latency bench and the
//! evaluation harness tying them to the hypercube retriever.

mod bm25;
mod dense;
mod judge;
mod latency;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::answer_question;
use crate::corpus::CorpusDoc;
use crate::cube::{read_jsonl, CubeError, DocId, DocumentRecord, HypercubeIndex};
use crate::exec::Execution;
use crate::llm::{Embedder, LlmClient, LlmError};
use crate::ranking::{rank, render_aligned};
use crate::retrieval::{Decomposer, QueryComponent, RetrievalConfig, RetrievalError, Retriever};

pub use bm25::{bm25_rank, idf, term_score, tokenize, Bm25Index, Bm25Params};
pub use dense::DenseScan;
pub use judge::{llm_judge, parse_verdict, JudgeOutcome, JudgeVerdict};
pub use latency::{bench_csv, bench_table, latency_bench, measure, BenchOptions, BenchRow, Timing};
pub use metrics::{
    median, precision_at_k, recall_at_k, semantic_score, token_f1, EmptyGold, LatencyStats, Ratio, TokenF1,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("gold document set is empty")]
    EmptyGold,
    #[error("evaluation set is empty")]
    EmptyQa,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error("judge reply is malformed after one re-ask: {raw}")]
    JudgeMalformed { raw: String },
}

/// One line of `qa.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question: String,
    #[serde(default)]
    pub answer: String,
    #[serde(deserialize_with = "ids_from_strings_or_numbers")]
    pub gold_doc_ids: BTreeSet<DocId>,
}

fn ids_from_strings_or_numbers<'de, D: serde::Deserializer<'de>>(d: D) -> Result<BTreeSet<DocId>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Text(String),
        Number(serde_json::Number),
    }
    let ids: Vec<Id> = Vec::deserialize(d)?;
    Ok(ids
        .into_iter()
        .map(|id| match id {
            Id::Text(s) => DocId::new(s),
            Id::Number(n) => DocId::new(n.to_string()),
        })
        .collect())
}

pub fn load_qa(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let records: Vec<EvalRecord> = read_jsonl(path)?;
    if records.is_empty() {
        return Err(EvalError::EmptyQa);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Hypercube,
    Bm25,
    DenseScan,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hypercube, Method::Bm25, Method::DenseScan];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hypercube => "hypercube",
            Method::Bm25 => "bm25",
            Method::DenseScan => "dense-scan",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| EvalError::Config(format!("unknown method {s:?} (hypercube, bm25, dense-scan)")))
    }
}

/// A named retrieval configuration in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub config: RetrievalConfig,
}

pub const TAU_SWEEP: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

/// `full`, `no-semantic`, `no-exact`, then `no-<dimension>` for each
/// dimension.
pub fn ablation_variants(base: &RetrievalConfig, dimensions: &[String]) -> Vec<Variant> {
    let mut out = vec![
        Variant { name: "full".into(), config: base.clone() },
        Variant { name: "no-semantic".into(), config: RetrievalConfig { semantic_enabled: false, ..base.clone() } },
        Variant {
            name: "no-exact".into(),
            config: RetrievalConfig { exact_enabled: false, semantic_enabled: true, ..base.clone() },
        },
    ];
    for d in dimensions {
        let mut config = base.clone();
        config.disabled_dimensions.insert(d.clone());
        out.push(Variant { name: format!("no-{d}"), config });
    }
    out
}

pub fn tau_variants(base: &RetrievalConfig) -> Vec<Variant> {
    TAU_SWEEP
        .iter()
        .map(|&tau| Variant { name: format!("tau={tau}"), config: RetrievalConfig { tau, ..base.clone() } })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub method: Method,
    pub variant: String,
    pub config: RetrievalConfig,
    pub empty_gold: EmptyGold,
    /// Generate answers with the chat backend and score them.
    pub answers: bool,
    /// Also run the LLM judge on generated answers.
    pub judge: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            method: Method::Hypercube,
            variant: "full".into(),
            config: RetrievalConfig::default(),
            empty_gold: EmptyGold::default(),
            answers: false,
            judge: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub question: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub components: Vec<QueryComponent>,
    pub retrieved: Vec<DocId>,
    pub gold: BTreeSet<DocId>,
    pub precision: Ratio,
    pub recall: Ratio,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub token_f1: Option<TokenF1>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub semantic_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub judge: Option<JudgeOutcome>,
    pub latency_ms: f64,
    /// Documents scored for this query.
    pub score_computations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub question: String,
    pub missing_doc_ids: Vec<DocId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub queries: usize,
    pub precision: f64,
    pub recall: f64,
    /// Queries whose recall is a convention (empty gold set).
    pub recall_flagged: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub token_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub semantic_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub correctness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub completeness: Option<f64>,
    pub judge_skipped: usize,
    pub latency: LatencyStats,
}

pub const SEMANTIC_SCORE_NOTE: &str =
    "semantic score = (1 + cos(embed(pred), embed(gold))) / 2 under the configured embedder; a local definition";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub note: String,
    pub method: Method,
    pub variant: String,
    pub k: usize,
    pub config: RetrievalConfig,
    pub aggregate: Aggregate,
    pub skipped: Vec<SkippedRecord>,
    pub queries: Vec<QueryRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

impl MetricReport {
    fn summary_row(&self) -> Vec<String> {
        let a = &self.aggregate;
        vec![
            self.method.to_string(),
            self.variant.clone(),
            a.queries.to_string(),
            format!("{:.4}", a.precision),
            format!("{:.4}", a.recall),
            fmt_opt(a.token_f1),
            fmt_opt(a.semantic_score),
            format!("{:.3}", a.latency.mean_ms),
            format!("{:.3}", a.latency.p50_ms),
            format!("{:.3}", a.latency.p95_ms),
            self.skipped.len().to_string(),
        ]
    }

    /// Aligned one-line summary per report, with the semantic score note.
    pub fn summary_table(reports: &[MetricReport]) -> String {
        let k = reports.first().map_or(0, |r| r.k);
        let mut rows = vec![[
            "method",
            "variant",
            "queries",
            &format!("P@{k}"),
            &format!("R@{k}"),
            "F1",
            "semantic",
            "mean_ms",
            "p50_ms",
            "p95_ms",
            "skipped",
        ]
        .map(String::from)
        .to_vec()];
        rows.extend(reports.iter().map(MetricReport::summary_row));
        format!("# {SEMANTIC_SCORE_NOTE}\n{}", render_aligned(&rows))
    }

    pub fn to_table(&self) -> String {
        let mut out = MetricReport::summary_table(std::slice::from_ref(self));
        let mut rows = vec![["question", "retrieved", "gold", "precision", "recall"].map(String::from).to_vec()];
        for q in &self.queries {
            let ids = |v: &mut dyn Iterator<Item = &DocId>| v.map(|d| d.to_string()).collect::<Vec<_>>().join(",");
            rows.push(vec![
                q.question.clone(),
                ids(&mut q.retrieved.iter()),
                ids(&mut q.gold.iter()),
                format!("{}/{}", q.precision.hits, q.precision.denominator),
                format!("{}/{}", q.recall.hits, q.recall.denominator),
            ]);
        }
        out.push('\n');
        out.push_str(&render_aligned(&rows));
        out
    }
}

/// Everything an evaluation reads. Baseline indexes are built on first use
/// and reused across runs.
pub struct Evaluator<'a> {
    index: &'a HypercubeIndex,
    corpus: BTreeMap<DocId, &'a CorpusDoc>,
    corpus_docs: &'a [CorpusDoc],
    embedder: &'a dyn Embedder,
    decomposer: &'a Decomposer<'a>,
    llm: Option<&'a LlmClient>,
    retriever: Retriever<'a>,
    bm25: OnceLock<Bm25Index>,
    dense: OnceLock<DenseScan>,
    exec: Execution,
}

struct Retrieved {
    components: Vec<QueryComponent>,
    doc_ids: Vec<DocId>,
    latency_ms: f64,
    score_computations: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        index: &'a HypercubeIndex,
        corpus: &'a [CorpusDoc],
        embedder: &'a dyn Embedder,
        decomposer: &'a Decomposer<'a>,
        llm: Option<&'a LlmClient>,
    ) -> Self {
        Evaluator {
            index,
            corpus: corpus.iter().map(|d| (d.doc_id.clone(), d)).collect(),
            corpus_docs: corpus,
            embedder,
            decomposer,
            llm,
            retriever: Retriever::new(index, embedder),
            bm25: OnceLock::new(),
            dense: OnceLock::new(),
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn bm25(&self) -> Result<&Bm25Index, EvalError> {
        if let Some(b) = self.bm25.get() {
            return Ok(b);
        }
        let built = Bm25Index::new(self.corpus_docs, Bm25Params::default())?;
        Ok(self.bm25.get_or_init(|| built))
    }

    fn dense(&self) -> Result<&DenseScan, EvalError> {
        if let Some(d) = self.dense.get() {
            return Ok(d);
        }
        let built = DenseScan::new(self.index, self.embedder)?;
        Ok(self.dense.get_or_init(|| built))
    }

    fn retrieve(&self, question: &str, method: Method, config: &RetrievalConfig) -> Result<Retrieved, EvalError> {
        let k = config.top_k;
        match method {
            Method::Hypercube => {
                let components = match self.decomposer.decompose(question, self.index) {
                    Ok(c) => c,
                    Err(RetrievalError::NoComponents) => {
                        tracing::warn!(question, "no query components; nothing retrieved");
                        return Ok(Retrieved {
                            components: Vec::new(),
                            doc_ids: Vec::new(),
                            latency_ms: 0.0,
                            score_computations: 0,
                        });
                    }
                    Err(e) => return Err(e.into()),
                };
                let start = Instant::now();
                let r = self.retriever.retrieve(&components, config)?;
                let ranked = rank(&r.matches, r.n_components, k);
                let latency_ms = start.elapsed().as_secs_f64() * 1e3;
                Ok(Retrieved {
                    components,
                    doc_ids: ranked.entries.into_iter().map(|e| e.doc_id).collect(),
                    latency_ms,
                    score_computations: r.stats.score_computations,
                })
            }
            Method::Bm25 => {
                let bm25 = self.bm25()?;
                let start = Instant::now();
                let ranked = match bm25.top_k(question, k) {
                    Ok(r) => r,
                    Err(EvalError::EmptyQuery) => Vec::new(),
                    Err(e) => return Err(e),
                };
                Ok(Retrieved {
                    components: Vec::new(),
                    doc_ids: ranked.into_iter().map(|(d, _)| d).collect(),
                    latency_ms: start.elapsed().as_secs_f64() * 1e3,
                    score_computations: bm25.len(),
                })
            }
            Method::DenseScan => {
                let dense = self.dense()?;
                let q = self.embedder.embed_one(question)?;
                let start = Instant::now();
                let ranked = dense.search_vector(&q, k);
                Ok(Retrieved {
                    components: Vec::new(),
                    doc_ids: ranked.into_iter().map(|(d, _)| d).collect(),
                    latency_ms: start.elapsed().as_secs_f64() * 1e3,
                    score_computations: dense.len(),
                })
            }
        }
    }

    fn run_one(&self, record: &EvalRecord, opts: &EvalOptions) -> Result<QueryRow, EvalError> {
        let k = opts.config.top_k;
        let got = self.retrieve(&record.question, opts.method, &opts.config)?;
        let precision = precision_at_k(&got.doc_ids, &record.gold_doc_ids, k)?;
        let recall = recall_at_k(&got.doc_ids, &record.gold_doc_ids, k, opts.empty_gold)?;
        let mut row = QueryRow {
            question: record.question.clone(),
            components: got.components,
            retrieved: got.doc_ids,
            gold: record.gold_doc_ids.clone(),
            precision,
            recall,
            answer: None,
            token_f1: None,
            semantic_score: None,
            judge: None,
            latency_ms: got.latency_ms,
            score_computations: got.score_computations,
        };
        if let (true, Some(llm)) = (opts.answers, self.llm) {
            let docs: Vec<DocumentRecord> = row
                .retrieved
                .iter()
                .filter_map(|id| self.corpus.get(id).map(|d| DocumentRecord::new(id.clone(), d.text.clone())))
                .collect();
            let refs: Vec<&DocumentRecord> = docs.iter().collect();
            let answer = answer_question(&record.question, &refs, llm)?.answer;
            row.token_f1 = Some(token_f1(&answer, &record.answer));
            row.semantic_score = Some(semantic_score(&answer, &record.answer, self.embedder)?);
            if opts.judge {
                row.judge = Some(llm_judge(&record.question, &record.answer, &answer, llm)?);
            }
            row.answer = Some(answer);
        }
        Ok(row)
    }

    /// Runs every record whose gold documents all exist in the corpus;
    /// the others are skipped with a warning and listed in the report.
    pub fn evaluate(&self, records: &[EvalRecord], opts: &EvalOptions) -> Result<MetricReport, EvalError> {
        if records.is_empty() {
            return Err(EvalError::EmptyQa);
        }
        opts.config.validate()?;
        if opts.judge && !opts.answers {
            return Err(EvalError::Config("judging needs generated answers".into()));
        }
        let mut skipped = Vec::new();
        let mut kept = Vec::new();
        for r in records {
            let missing: Vec<DocId> =
                r.gold_doc_ids.iter().filter(|d| !self.corpus.contains_key(*d)).cloned().collect();
            if missing.is_empty() {
                kept.push(r);
            } else {
                tracing::warn!(question = %r.question, ?missing, "gold documents absent from corpus; record skipped");
                skipped.push(SkippedRecord { question: r.question.clone(), missing_doc_ids: missing });
            }
        }
        let rows: Vec<QueryRow> =
            self.exec.map(&kept, |r| self.run_one(r, opts)).into_iter().collect::<Result<_, _>>()?;

        let latencies: Vec<f64> = rows.iter().map(|r| r.latency_ms).collect();
        let verdicts: Vec<&JudgeVerdict> = rows
            .iter()
            .filter_map(|r| match &r.judge {
                Some(JudgeOutcome::Judged(v)) => Some(v),
                _ => None,
            })
            .collect();
        let aggregate = Aggregate {
            queries: rows.len(),
            precision: mean(rows.iter().map(|r| r.precision.value())).unwrap_or(0.0),
            recall: mean(rows.iter().map(|r| r.recall.value())).unwrap_or(0.0),
            recall_flagged: rows.iter().filter(|r| r.recall.flagged()).count(),
            token_f1: mean(rows.iter().filter_map(|r| r.token_f1.map(|f| f.value()))),
            semantic_score: mean(rows.iter().filter_map(|r| r.semantic_score)),
            correctness: mean(verdicts.iter().map(|v| f64::from(v.correctness))),
            completeness: mean(verdicts.iter().map(|v| f64::from(v.completeness))),
            judge_skipped: rows.iter().filter(|r| matches!(r.judge, Some(JudgeOutcome::Skipped { .. }))).count(),
            latency: LatencyStats::from_samples(&latencies),
        };
        Ok(MetricReport {
            note: SEMANTIC_SCORE_NOTE.into(),
            method: opts.method,
            variant: opts.variant.clone(),
            k: opts.config.top_k,
            config: opts.config.clone(),
            aggregate,
            skipped,
            queries: rows,
        })
    }
}
