//! `corpus.jsonl` input: one `{"doc_id", "text"}` object per line.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cube::{read_jsonl, CubeError, DocId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    #[serde(deserialize_with = "id_from_string_or_number")]
    pub doc_id: DocId,
    pub text: String,
}

impl CorpusDoc {
    pub fn new(doc_id: impl Into<DocId>, text: impl Into<String>) -> Self {
        CorpusDoc { doc_id: doc_id.into(), text: text.into() }
    }
}

fn id_from_string_or_number<'de, D: serde::Deserializer<'de>>(d: D) -> Result<DocId, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Text(String),
        Number(serde_json::Number),
    }
    Ok(match Id::deserialize(d)? {
        Id::Text(s) => DocId::new(s),
        Id::Number(n) => DocId::new(n.to_string()),
    })
}

/// Loads a corpus, rejecting duplicate ids.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusDoc>, CubeError> {
    let docs: Vec<CorpusDoc> = read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for doc in &docs {
        if !seen.insert(&doc.doc_id) {
            return Err(CubeError::DuplicateDocument(doc.doc_id.clone()));
        }
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_ids_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"doc_id\": 565, \"text\": \"a\"}\n\n{\"doc_id\": \"b\", \"text\": \"b\"}\n").unwrap();
        let docs = load_corpus(&path).unwrap();
        assert_eq!(docs[0].doc_id.as_str(), "565");
        assert_eq!(docs.len(), 2);
    }

    #[test]
    fn duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"doc_id\": \"a\", \"text\": \"\"}\n{\"doc_id\": \"a\", \"text\": \"\"}\n").unwrap();
        assert!(load_corpus(&path).is_err());
    }
}
