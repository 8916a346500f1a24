//! Seeded random corpora with known label structure.
//!
//! A fraction of documents carry labels from a "relevant" vocabulary that
//! queries are drawn from; the rest carry labels from a disjoint noise
//! vocabulary, so they can never match a query exactly.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::CorpusDoc;
use crate::cube::{CubeError, DimensionSchema, DocId, DocumentRecord, HypercubeIndex, Label};
use crate::retrieval::QueryComponent;

pub const DIMENSIONS: [&str; 3] = ["location", "event", "theme"];

const FILLER: [&str; 12] =
    ["the", "report", "noted", "during", "with", "after", "observed", "levels", "across", "regional", "data", "season"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    /// Share of documents labelled only from the noise vocabulary.
    pub noise_fraction: f64,
    /// Distinct relevant labels per dimension.
    pub relevant_vocab: usize,
    pub noise_vocab: usize,
    pub n_queries: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_docs: usize, seed: u64) -> Self {
        SyntheticSpec { n_docs, noise_fraction: 0.9, relevant_vocab: 40, noise_vocab: 400, n_queries: 20, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    pub text: String,
    pub components: Vec<QueryComponent>,
    /// Documents carrying every component label.
    pub full_match: BTreeSet<DocId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub schema: Vec<DimensionSchema>,
    pub records: Vec<DocumentRecord>,
    pub queries: Vec<SyntheticQuery>,
    /// Documents labelled from the relevant vocabulary.
    pub relevant: BTreeSet<DocId>,
}

pub fn schema() -> Vec<DimensionSchema> {
    DIMENSIONS
        .iter()
        .map(|d| {
            DimensionSchema::new(*d, format!("{d} mentions"), format!("List the {d} labels in: {{document}}"))
                .expect("static schema is valid")
        })
        .collect()
}

fn relevant_label(dim: &str, i: usize) -> Label {
    Label::new(&format!("{dim} alpha {i}")).expect("non-empty")
}

fn noise_label(dim: &str, i: usize) -> Label {
    Label::new(&format!("{dim} omega {i}")).expect("non-empty")
}

/// Generates a corpus and queries. Identical specs give identical output.
pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_relevant = ((spec.n_docs as f64) * (1.0 - spec.noise_fraction)).round().max(1.0) as usize;
    let n_relevant = n_relevant.min(spec.n_docs);
    let mut records = Vec::with_capacity(spec.n_docs);
    let mut relevant = BTreeSet::new();
    for i in 0..spec.n_docs {
        let is_relevant = i < n_relevant;
        let doc_id = DocId::new(format!("s{i:06}"));
        let mut record = DocumentRecord::new(doc_id.clone(), String::new());
        let mut words: Vec<String> = Vec::new();
        for dim in DIMENSIONS {
            for _ in 0..rng.random_range(1..=2) {
                let label = if is_relevant {
                    relevant_label(dim, rng.random_range(0..spec.relevant_vocab.max(1)))
                } else {
                    noise_label(dim, rng.random_range(0..spec.noise_vocab.max(1)))
                };
                let count = rng.random_range(1..=3);
                for _ in 0..count {
                    words.push(label.as_str().to_string());
                }
                record.add_label(dim, label, count);
            }
        }
        for _ in 0..rng.random_range(5..15) {
            words.push(FILLER.choose(&mut rng).expect("non-empty").to_string());
        }
        words.shuffle(&mut rng);
        record.text = words.join(" ");
        if is_relevant {
            relevant.insert(doc_id);
        }
        records.push(record);
    }

    let mut queries = Vec::with_capacity(spec.n_queries);
    for _ in 0..spec.n_queries {
        let source = &records[rng.random_range(0..n_relevant)];
        let n_dims = rng.random_range(1..=DIMENSIONS.len());
        let mut components = Vec::new();
        for dim in DIMENSIONS.iter().take(n_dims) {
            let labels: Vec<&Label> = source.labels.get(*dim).into_iter().flat_map(|l| l.keys()).collect();
            if let Some(label) = labels.choose(&mut rng) {
                components.push(QueryComponent { dimension: dim.to_string(), content: (*label).clone() });
            }
        }
        let full_match = records
            .iter()
            .filter(|r| components.iter().all(|c| r.has_label(&c.dimension, &c.content)))
            .map(|r| r.doc_id.clone())
            .collect();
        let text = components.iter().map(|c| c.content.as_str()).collect::<Vec<_>>().join(" ");
        queries.push(SyntheticQuery { text, components, full_match });
    }
    SyntheticCorpus { schema: schema(), records, queries, relevant }
}

impl SyntheticCorpus {
    pub fn index(&self) -> Result<HypercubeIndex, CubeError> {
        let mut index = HypercubeIndex::new(self.schema.clone())?;
        for r in &self.records {
            index.add_document(r.clone())?;
        }
        Ok(index)
    }

    pub fn corpus(&self) -> Vec<CorpusDoc> {
        self.records.iter().map(|r| CorpusDoc::new(r.doc_id.clone(), r.text.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_separated() {
        let spec = SyntheticSpec::new(300, 7);
        let a = generate(&spec);
        assert_eq!(a, generate(&spec));
        assert_eq!(a.relevant.len(), 30);
        for r in &a.records {
            let noise = !a.relevant.contains(&r.doc_id);
            for q in &a.queries {
                if noise {
                    assert!(q.components.iter().all(|c| !r.has_label(&c.dimension, &c.content)));
                }
            }
        }
        for q in &a.queries {
            assert!(!q.components.is_empty());
            assert!(!q.full_match.is_empty());
        }
        assert_eq!(a.index().unwrap().len(), 300);
    }
}
