//! Per-query latency of the three retrieval methods on synthetic corpora
//! where most documents carry no query labels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hypercube_rag::eval::{Bm25Index, Bm25Params, DenseScan};
use hypercube_rag::llm::{Embedder, ToyEmbedder};
use hypercube_rag::synthetic::{generate, SyntheticSpec};
use hypercube_rag::{rank, RetrievalConfig, Retriever};

fn methods(c: &mut Criterion) {
    let embedder = ToyEmbedder::default();
    let mut group = c.benchmark_group("query");
    for size in [1000, 5000] {
        let data = generate(&SyntheticSpec::new(size, 42));
        let index = data.index().unwrap();
        let retriever = Retriever::new(&index, &embedder);
        let config = RetrievalConfig::default();
        let bm25 = Bm25Index::new(&data.corpus(), Bm25Params::default()).unwrap();
        let dense = DenseScan::new(&index, &embedder).unwrap();
        let texts: Vec<&str> = data.queries.iter().map(|q| q.text.as_str()).collect();
        let vectors = embedder.embed(&texts).unwrap();

        group.bench_with_input(BenchmarkId::new("hypercube", size), &data, |b, data| {
            b.iter(|| {
                for q in &data.queries {
                    let r = retriever.retrieve(&q.components, &config).unwrap();
                    black_box(rank(&r.matches, r.n_components, config.top_k));
                }
            })
        });
        group.bench_with_input(BenchmarkId::new("bm25", size), &data, |b, data| {
            b.iter(|| {
                for q in &data.queries {
                    black_box(bm25.top_k(&q.text, config.top_k).unwrap());
                }
            })
        });
        group.bench_with_input(BenchmarkId::new("dense-scan", size), &vectors, |b, vectors| {
            b.iter(|| {
                for v in vectors {
                    black_box(dense.search_vector(v, config.top_k));
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, methods);
criterion_main!(benches);
