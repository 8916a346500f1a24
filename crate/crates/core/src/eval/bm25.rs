//! Okapi BM25 over whitespace tokens normalized like labels.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusDoc;
use crate::cube::{normalize_label, DocId};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Whitespace split, each token normalized; tokens that normalize to
/// nothing (bare punctuation) are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(normalize_label).map(String::from).collect()
}

/// Non-negative inverse document frequency: `ln(1 + (N - n + 0.5) / (n + 0.5))`.
pub fn idf(n_docs: usize, doc_freq: usize) -> f64 {
    let (n, df) = (n_docs as f64, doc_freq as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Contribution of one query token occurrence to one document's score.
pub fn term_score(idf: f64, tf: f64, doc_len: f64, avg_len: f64, p: Bm25Params) -> f64 {
    idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * doc_len / avg_len))
}

/// Inverted BM25 index: per-term posting lists of `(doc position, tf)`.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<DocId>,
    doc_lens: Vec<usize>,
    avg_len: f64,
    postings: HashMap<String, Vec<(usize, u32)>>,
}

impl Bm25Index {
    pub fn new(corpus: &[CorpusDoc], params: Bm25Params) -> Result<Self, EvalError> {
        if params.k1 <= 0.0 || !(0.0..=1.0).contains(&params.b) {
            return Err(EvalError::Config(format!("BM25 needs k1 > 0 and 0 <= b <= 1, got {params:?}")));
        }
        let mut docs: Vec<&CorpusDoc> = corpus.iter().collect();
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        for (pos, doc) in docs.iter().enumerate() {
            let tokens = tokenize(&doc.text);
            doc_lens.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((pos, n));
            }
        }
        let total: usize = doc_lens.iter().sum();
        let avg_len = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Ok(Bm25Index {
            params,
            doc_ids: docs.into_iter().map(|d| d.doc_id.clone()).collect(),
            doc_lens,
            avg_len,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    /// Every document with its score, best first; ties by doc id. Each query
    /// token occurrence contributes once, in query order.
    pub fn rank(&self, query: &str) -> Result<Vec<(DocId, f64)>, EvalError> {
        let tokens = tokenize(query);
        if tokens.is_empty() {
            return Err(EvalError::EmptyQuery);
        }
        let mut scores = vec![0f64; self.doc_ids.len()];
        for t in &tokens {
            let Some(list) = self.postings.get(t) else { continue };
            let w = idf(self.doc_ids.len(), list.len());
            for &(pos, tf) in list {
                scores[pos] += term_score(w, f64::from(tf), self.doc_lens[pos] as f64, self.avg_len, self.params);
            }
        }
        let mut ranked: Vec<(DocId, f64)> = self.doc_ids.iter().cloned().zip(scores).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(ranked)
    }

    pub fn top_k(&self, query: &str, k: usize) -> Result<Vec<(DocId, f64)>, EvalError> {
        let mut ranked = self.rank(query)?;
        ranked.truncate(k);
        Ok(ranked)
    }
}

/// One-shot ranking without keeping the index.
pub fn bm25_rank(query: &str, corpus: &[CorpusDoc], params: Bm25Params) -> Result<Vec<(DocId, f64)>, EvalError> {
    Bm25Index::new(corpus, params)?.rank(query)
}
