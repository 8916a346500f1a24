//! Exhaustive cosine scan over one pooled embedding per document.

use std::collections::{BTreeSet, HashMap};

use crate::cube::{DocId, HypercubeIndex};
use crate::llm::{cosine, Embedder, EmbeddingVector};

use super::EvalError;

const EMBED_BATCH: usize = 256;

/// Each document is represented by the re-normalized mean of its label
/// embeddings; a document without labels falls back to its text embedding.
#[derive(Debug, Clone)]
pub struct DenseScan {
    docs: Vec<(DocId, EmbeddingVector)>,
}

fn embed_all(embedder: &dyn Embedder, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EvalError> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EMBED_BATCH) {
        out.extend(embedder.embed(chunk).map_err(EvalError::Llm)?);
    }
    Ok(out)
}

impl DenseScan {
    pub fn new(index: &HypercubeIndex, embedder: &dyn Embedder) -> Result<Self, EvalError> {
        let labels: BTreeSet<&str> =
            index.docs().flat_map(|d| d.labels.values().flat_map(|m| m.keys().map(|l| l.as_str()))).collect();
        let labels: Vec<&str> = labels.into_iter().collect();
        let vectors: HashMap<&str, EmbeddingVector> = if labels.is_empty() {
            HashMap::new()
        } else {
            labels.iter().copied().zip(embed_all(embedder, &labels)?).collect()
        };

        let mut docs = Vec::with_capacity(index.len());
        let mut unlabelled = Vec::new();
        for doc in index.docs() {
            let own: Vec<&EmbeddingVector> =
                doc.labels.values().flat_map(|m| m.keys().map(|l| &vectors[l.as_str()])).collect();
            match EmbeddingVector::pooled(&own) {
                Some(v) => docs.push((doc.doc_id.clone(), v)),
                None => unlabelled.push(doc),
            }
        }
        if !unlabelled.is_empty() {
            let texts: Vec<&str> = unlabelled.iter().map(|d| d.text.as_str()).collect();
            for (doc, v) in unlabelled.iter().zip(embed_all(embedder, &texts)?) {
                docs.push((doc.doc_id.clone(), v));
            }
        }
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(DenseScan { docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Top `k` documents by cosine to `query`, ties by doc id. Scores every
    /// document.
    pub fn search_vector(&self, query: &EmbeddingVector, k: usize) -> Vec<(DocId, f64)> {
        let mut scored: Vec<(DocId, f64)> = self.docs.iter().map(|(id, v)| (id.clone(), cosine(query, v))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    pub fn search(&self, query: &str, embedder: &dyn Embedder, k: usize) -> Result<Vec<(DocId, f64)>, EvalError> {
        let q = embedder.embed_one(query).map_err(EvalError::Llm)?;
        Ok(self.search_vector(&q, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::tests::{case_schema, label};
    use crate::cube::DocumentRecord;
    use crate::llm::ToyEmbedder;

    #[test]
    fn nearest_doc_by_labels_then_text_fallback() {
        let mut index = HypercubeIndex::new(case_schema()).unwrap();
        index.add_document(DocumentRecord::new("a", "").with_label("theme", label("rain"), 1)).unwrap();
        index.add_document(DocumentRecord::new("b", "").with_label("theme", label("drought"), 1)).unwrap();
        index.add_document(DocumentRecord::new("c", "volcano ash")).unwrap();
        let e = ToyEmbedder::default();
        let dense = DenseScan::new(&index, &e).unwrap();
        assert_eq!(dense.len(), 3);
        assert_eq!(dense.search("rain", &e, 1).unwrap()[0], (DocId::from("a"), 1.0));
        assert_eq!(dense.search("volcano ash", &e, 1).unwrap()[0].0.as_str(), "c");
        assert_eq!(dense.search("x", &e, 10).unwrap().len(), 3);
    }
}
