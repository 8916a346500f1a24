//! Per-query retrieval latency on synthetic corpora of growing size.
//!
//! Index construction and query embedding happen before the clock starts;
//! only the method's own search (and, for the hypercube, ranking) is timed.
//! Everything runs on the calling thread.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::llm::Embedder;
use crate::ranking::{rank, render_aligned};
use crate::retrieval::{RetrievalConfig, Retriever};
use crate::synthetic::{generate, SyntheticCorpus, SyntheticSpec};

use super::{Bm25Index, Bm25Params, DenseScan, EvalError, LatencyStats, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub sizes: Vec<usize>,
    pub n_queries: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub top_k: usize,
    pub methods: Vec<Method>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            sizes: vec![500, 1000, 2500, 5000],
            n_queries: 20,
            repetitions: 5,
            seed: 42,
            top_k: 5,
            methods: Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub corpus_size: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
    /// Mean candidate-set size per query (the whole corpus for scans).
    pub mean_candidates: f64,
    pub mean_score_computations: f64,
    /// Queries where `score_computations != candidates`.
    pub counter_mismatches: usize,
}

/// Raw measurements of one method on one corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// One sample per query per repetition, in milliseconds.
    pub samples_ms: Vec<f64>,
    /// Per query (from the first repetition).
    pub candidates: Vec<usize>,
    pub score_computations: Vec<usize>,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Times `method` over every query of `data`, `repetitions` times.
pub fn measure(
    method: Method,
    data: &SyntheticCorpus,
    embedder: &dyn Embedder,
    repetitions: usize,
    top_k: usize,
) -> Result<Timing, EvalError> {
    if repetitions == 0 || top_k == 0 {
        return Err(EvalError::Config("repetitions and top_k must be positive".into()));
    }
    let mut timing = Timing::default();
    match method {
        Method::Hypercube => {
            let index = data.index()?;
            let retriever = Retriever::new(&index, embedder);
            let config = RetrievalConfig { top_k, ..RetrievalConfig::default() };
            for rep in 0..repetitions {
                for q in &data.queries {
                    let start = Instant::now();
                    let r = retriever.retrieve(&q.components, &config)?;
                    let ranked = rank(&r.matches, r.n_components, top_k);
                    timing.samples_ms.push(elapsed_ms(start));
                    std::hint::black_box(ranked);
                    if rep == 0 {
                        timing.candidates.push(r.stats.candidates);
                        timing.score_computations.push(r.stats.score_computations);
                    }
                }
            }
        }
        Method::Bm25 => {
            let bm25 = Bm25Index::new(&data.corpus(), Bm25Params::default())?;
            for rep in 0..repetitions {
                for q in &data.queries {
                    let start = Instant::now();
                    let ranked = bm25.top_k(&q.text, top_k)?;
                    timing.samples_ms.push(elapsed_ms(start));
                    std::hint::black_box(ranked);
                    if rep == 0 {
                        timing.candidates.push(bm25.len());
                        timing.score_computations.push(bm25.len());
                    }
                }
            }
        }
        Method::DenseScan => {
            let index = data.index()?;
            let dense = DenseScan::new(&index, embedder)?;
            let texts: Vec<&str> = data.queries.iter().map(|q| q.text.as_str()).collect();
            let vectors = if texts.is_empty() { Vec::new() } else { embedder.embed(&texts)? };
            for rep in 0..repetitions {
                for v in &vectors {
                    let start = Instant::now();
                    let ranked = dense.search_vector(v, top_k);
                    timing.samples_ms.push(elapsed_ms(start));
                    std::hint::black_box(ranked);
                    if rep == 0 {
                        timing.candidates.push(dense.len());
                        timing.score_computations.push(dense.len());
                    }
                }
            }
        }
    }
    Ok(timing)
}

fn average(v: &[usize]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<usize>() as f64 / v.len() as f64
    }
}

/// One row per (method, size). Needs at least three sizes and three
/// repetitions.
pub fn latency_bench(opts: &BenchOptions, embedder: &dyn Embedder) -> Result<Vec<BenchRow>, EvalError> {
    if opts.sizes.len() < 3 {
        return Err(EvalError::Config(format!("need at least 3 corpus sizes, got {}", opts.sizes.len())));
    }
    if opts.repetitions < 3 {
        return Err(EvalError::Config(format!("need at least 3 repetitions, got {}", opts.repetitions)));
    }
    if opts.n_queries == 0 || opts.sizes.contains(&0) {
        return Err(EvalError::Config("corpus sizes and query count must be positive".into()));
    }
    let mut rows = Vec::new();
    for &size in &opts.sizes {
        let data = generate(&SyntheticSpec { n_queries: opts.n_queries, ..SyntheticSpec::new(size, opts.seed) });
        for &method in &opts.methods {
            let t = measure(method, &data, embedder, opts.repetitions, opts.top_k)?;
            let stats = LatencyStats::from_samples(&t.samples_ms);
            tracing::info!(%method, size, median_ms = stats.p50_ms, "measured");
            rows.push(BenchRow {
                method,
                corpus_size: size,
                median_ms: stats.p50_ms,
                mean_ms: stats.mean_ms,
                p95_ms: stats.p95_ms,
                mean_candidates: average(&t.candidates),
                mean_score_computations: average(&t.score_computations),
                counter_mismatches: t.candidates.iter().zip(&t.score_computations).filter(|(a, b)| a != b).count(),
            });
        }
    }
    Ok(rows)
}

/// `method,corpus_size,median_ms` with a header line.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("method,corpus_size,median_ms\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6}\n", r.method, r.corpus_size, r.median_ms));
    }
    out
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut table = vec![["method", "corpus_size", "median_ms", "mean_ms", "p95_ms", "candidates", "scored"]
        .map(String::from)
        .to_vec()];
    for r in rows {
        table.push(vec![
            r.method.to_string(),
            r.corpus_size.to_string(),
            format!("{:.4}", r.median_ms),
            format!("{:.4}", r.mean_ms),
            format!("{:.4}", r.p95_ms),
            format!("{:.1}", r.mean_candidates),
            format!("{:.1}", r.mean_score_computations),
        ]);
    }
    render_aligned(&table)
}
