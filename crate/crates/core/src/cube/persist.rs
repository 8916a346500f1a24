//! On-disk layout of a built index.
//!
//! ```text
//! <dir>/schema.json     {"dimensions": [DimensionSchema, ...]}
//! <dir>/docs.jsonl      one DocumentRecord per line, sorted by doc_id
//! <dir>/postings.jsonl  one {"dimension","label","postings"} per line
//! ```
//!
//! Every collection is written in a canonical order, so the same records
//! always produce byte-identical files.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CubeError, DimensionSchema, DocumentRecord, HypercubeIndex, Label, Posting};

pub const SCHEMA_FILE: &str = "schema.json";
pub const DOCS_FILE: &str = "docs.jsonl";
pub const POSTINGS_FILE: &str = "postings.jsonl";

#[derive(Serialize, Deserialize)]
pub(crate) struct SchemaFile {
    pub dimensions: Vec<DimensionSchema>,
}

#[derive(Serialize, Deserialize)]
struct PostingLine {
    dimension: String,
    label: Label,
    postings: Vec<Posting>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CubeError + '_ {
    move |source| CubeError::Io { path: path.display().to_string(), source }
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), CubeError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|source| CubeError::Json {
            path: path.display().to_string(),
            line: 0,
            source,
        })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads a JSON-lines file, skipping blank lines.
pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CubeError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| CubeError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Writes a dimension list in the `schema.json` format.
pub fn save_schema(dimensions: &[DimensionSchema], path: &Path) -> Result<(), CubeError> {
    let mut text =
        serde_json::to_string_pretty(&SchemaFile { dimensions: dimensions.to_vec() }).expect("schema serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_schema(path: &Path) -> Result<Vec<DimensionSchema>, CubeError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let schema: SchemaFile = serde_json::from_str(&text).map_err(|source| CubeError::Json {
        path: path.display().to_string(),
        line: source.line(),
        source,
    })?;
    Ok(schema.dimensions)
}

impl HypercubeIndex {
    /// Persists the index into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), CubeError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        save_schema(&self.dimensions, &dir.join(SCHEMA_FILE))?;
        write_jsonl(&dir.join(DOCS_FILE), self.docs.values())?;
        let lines = self.dimensions.iter().zip(&self.postings).flat_map(|(dim, map)| {
            map.iter().map(move |(label, postings)| PostingLine {
                dimension: dim.name.clone(),
                label: label.clone(),
                postings: postings.clone(),
            })
        });
        write_jsonl(&dir.join(POSTINGS_FILE), lines)
    }

    /// Loads an index written by [`save`](Self::save).
    ///
    /// Postings are rebuilt from the document store and checked against
    /// `postings.jsonl`; any disagreement is reported as corruption.
    pub fn load(dir: &Path) -> Result<HypercubeIndex, CubeError> {
        let dimensions = load_schema(&dir.join(SCHEMA_FILE))?;
        let records: Vec<DocumentRecord> = read_jsonl(&dir.join(DOCS_FILE))?;
        let mut index = HypercubeIndex::new(dimensions)?;
        for record in records {
            index.add_document(record)?;
        }
        let stored: Vec<PostingLine> = read_jsonl(&dir.join(POSTINGS_FILE))?;
        let expected: usize = index.postings.iter().map(|m| m.len()).sum();
        if stored.len() != expected {
            return Err(CubeError::Corrupt(format!(
                "{POSTINGS_FILE} has {} entries, documents imply {expected}",
                stored.len()
            )));
        }
        for line in stored {
            let rebuilt = index.lookup(&line.dimension, &line.label)?;
            if rebuilt != line.postings.as_slice() {
                return Err(CubeError::Corrupt(format!(
                    "posting list for ({}, {}) disagrees with {DOCS_FILE}",
                    line.dimension, line.label
                )));
            }
        }
        Ok(index)
    }
}
