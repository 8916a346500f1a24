//! The hypercube: dimension schemas, labelled documents and the per-dimension
//! inverted maps that locate documents in cube cells.
//!
//! Cells are never materialized. A cell is a partial coordinate
//! ([`CubeCellRef`]) and its documents are the intersection of the posting
//! lists of its assigned `(dimension, label)` pairs.

mod label;
mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use label::is_punctuation;
pub use label::{normalize_label, Label};
pub(crate) use persist::read_jsonl;
pub use persist::{load_schema, save_schema, DOCS_FILE, POSTINGS_FILE, SCHEMA_FILE};

/// Placeholder every extraction prompt carries exactly once.
pub const DOCUMENT_PLACEHOLDER: &str = "{document}";

#[derive(Debug, Error)]
pub enum CubeError {
    #[error("invalid dimension name {0:?}: must be non-empty, lowercase, without whitespace")]
    InvalidDimensionName(String),
    #[error("duplicate dimension {0:?}")]
    DuplicateDimension(String),
    #[error("prompt template for dimension {dimension:?} must contain exactly one {placeholder} placeholder (found {found})", placeholder = DOCUMENT_PLACEHOLDER)]
    BadPromptTemplate { dimension: String, found: usize },
    #[error("unknown dimension {name:?}; valid dimensions: {}", valid.join(", "))]
    UnknownDimension { name: String, valid: Vec<String> },
    #[error("document {0} is already indexed")]
    DuplicateDocument(DocId),
    #[error("document {doc_id}: label {label:?} on {dimension:?} has count 0")]
    ZeroCount { doc_id: DocId, dimension: String, label: Label },
    #[error("cube cell must assign at least one dimension")]
    EmptyCell,
    #[error("unknown document {0}")]
    UnknownDocument(DocId),
    #[error("schemas differ; cannot merge indexes")]
    SchemaMismatch,
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Opaque, stable document identifier. Ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(String);

impl DocId {
    pub fn new(id: impl Into<String>) -> Self {
        DocId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DocId {
    fn from(s: &str) -> Self {
        DocId(s.to_string())
    }
}

impl From<String> for DocId {
    fn from(s: String) -> Self {
        DocId(s)
    }
}

/// Normalizes a free-form dimension name ("Organizations / Research" becomes
/// "organizations_research").
pub fn normalize_dimension_name(raw: &str) -> Option<String> {
    let label = normalize_label(raw)?;
    let mut out = String::new();
    let mut pending_sep = false;
    for c in label.as_str().chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(c);
        } else if c == '_' || c == '-' || c == ' ' || c == '/' || is_punctuation(c) {
            pending_sep = true;
        } else {
            out.push(c);
        }
    }
    (!out.is_empty()).then_some(out)
}

/// One axis of the cube.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDimension")]
pub struct DimensionSchema {
    pub name: String,
    pub description: String,
    pub prompt_template: String,
}

#[derive(Deserialize)]
struct RawDimension {
    name: String,
    #[serde(default)]
    description: String,
    prompt_template: String,
}

impl TryFrom<RawDimension> for DimensionSchema {
    type Error = CubeError;

    fn try_from(raw: RawDimension) -> Result<Self, Self::Error> {
        DimensionSchema::new(raw.name, raw.description, raw.prompt_template)
    }
}

impl DimensionSchema {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        prompt_template: impl Into<String>,
    ) -> Result<Self, CubeError> {
        let name = name.into();
        if normalize_dimension_name(&name).as_deref() != Some(name.as_str()) {
            return Err(CubeError::InvalidDimensionName(name));
        }
        let prompt_template = prompt_template.into();
        let found = prompt_template.matches(DOCUMENT_PLACEHOLDER).count();
        if found != 1 {
            return Err(CubeError::BadPromptTemplate { dimension: name, found });
        }
        Ok(DimensionSchema { name, description: description.into(), prompt_template })
    }
}

/// Per-dimension label multiset of one document.
pub type LabelCounts = BTreeMap<Label, u32>;

/// A document and its cube-cell assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: DocId,
    pub text: String,
    #[serde(default)]
    pub labels: BTreeMap<String, LabelCounts>,
}

impl DocumentRecord {
    pub fn new(doc_id: impl Into<DocId>, text: impl Into<String>) -> Self {
        DocumentRecord { doc_id: doc_id.into(), text: text.into(), labels: BTreeMap::new() }
    }

    /// Builder-style label insertion; counts accumulate.
    pub fn with_label(mut self, dimension: &str, label: Label, count: u32) -> Self {
        self.add_label(dimension, label, count);
        self
    }

    pub fn add_label(&mut self, dimension: &str, label: Label, count: u32) {
        *self.labels.entry(dimension.to_string()).or_default().entry(label).or_insert(0) += count;
    }

    /// Occurrence count of `label` on `dimension`, 0 if absent.
    pub fn count(&self, dimension: &str, label: &Label) -> u32 {
        self.labels.get(dimension).and_then(|m| m.get(label)).copied().unwrap_or(0)
    }

    pub fn has_label(&self, dimension: &str, label: &Label) -> bool {
        self.count(dimension, label) > 0
    }

    /// Total number of distinct labels over all dimensions.
    pub fn label_count(&self) -> usize {
        self.labels.values().map(BTreeMap::len).sum()
    }
}

/// One entry of a posting list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc_id: DocId,
    pub count: u32,
}

/// A partial cube coordinate: unassigned dimensions are wildcards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubeCellRef {
    assignments: BTreeMap<String, Label>,
}

impl CubeCellRef {
    pub fn new<I, S>(assignments: I) -> Result<Self, CubeError>
    where
        I: IntoIterator<Item = (S, Label)>,
        S: Into<String>,
    {
        let assignments: BTreeMap<String, Label> = assignments.into_iter().map(|(d, l)| (d.into(), l)).collect();
        if assignments.is_empty() {
            return Err(CubeError::EmptyCell);
        }
        Ok(CubeCellRef { assignments })
    }

    pub fn assignments(&self) -> &BTreeMap<String, Label> {
        &self.assignments
    }
}

/// Per-dimension inverted maps plus the document store.
///
/// Postings and the document store are kept consistent by construction: the
/// only mutators are [`add_document`](Self::add_document) and
/// [`merge`](Self::merge). Query paths take `&self`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypercubeIndex {
    dimensions: Vec<DimensionSchema>,
    positions: HashMap<String, usize>,
    postings: Vec<BTreeMap<Label, Vec<Posting>>>,
    docs: BTreeMap<DocId, DocumentRecord>,
}

impl HypercubeIndex {
    pub fn new(dimensions: Vec<DimensionSchema>) -> Result<Self, CubeError> {
        let mut positions = HashMap::with_capacity(dimensions.len());
        for (i, dim) in dimensions.iter().enumerate() {
            if positions.insert(dim.name.clone(), i).is_some() {
                return Err(CubeError::DuplicateDimension(dim.name.clone()));
            }
        }
        let postings = vec![BTreeMap::new(); dimensions.len()];
        Ok(HypercubeIndex { dimensions, positions, postings, docs: BTreeMap::new() })
    }

    pub fn dimensions(&self) -> &[DimensionSchema] {
        &self.dimensions
    }

    pub fn dimension_names(&self) -> Vec<String> {
        self.dimensions.iter().map(|d| d.name.clone()).collect()
    }

    pub fn has_dimension(&self, name: &str) -> bool {
        self.positions.contains_key(name)
    }

    fn position(&self, name: &str) -> Result<usize, CubeError> {
        self.positions
            .get(name)
            .copied()
            .ok_or_else(|| CubeError::UnknownDimension { name: name.to_string(), valid: self.dimension_names() })
    }

    /// Indexes `record` under every `(dimension, label)` pair it carries.
    ///
    /// The record is validated before anything is touched, so a rejected
    /// record leaves the index unchanged.
    pub fn add_document(&mut self, record: DocumentRecord) -> Result<(), CubeError> {
        if self.docs.contains_key(&record.doc_id) {
            return Err(CubeError::DuplicateDocument(record.doc_id));
        }
        for (dimension, labels) in &record.labels {
            self.position(dimension)?;
            if let Some((label, _)) = labels.iter().find(|(_, &c)| c == 0) {
                return Err(CubeError::ZeroCount {
                    doc_id: record.doc_id.clone(),
                    dimension: dimension.clone(),
                    label: label.clone(),
                });
            }
        }
        for (dimension, labels) in &record.labels {
            let pos = self.positions[dimension.as_str()];
            for (label, &count) in labels {
                let list = self.postings[pos].entry(label.clone()).or_default();
                let posting = Posting { doc_id: record.doc_id.clone(), count };
                // Ascending insertion is the common case and hits the fast path.
                match list.last() {
                    Some(last) if last.doc_id > record.doc_id => {
                        let at = list.partition_point(|p| p.doc_id < record.doc_id);
                        list.insert(at, posting);
                    }
                    _ => list.push(posting),
                }
            }
        }
        self.docs.insert(record.doc_id.clone(), record);
        Ok(())
    }

    /// Posting list for `(dimension, label)`, sorted by doc id. Empty when the
    /// cell is unpopulated.
    pub fn lookup(&self, dimension: &str, label: &Label) -> Result<&[Posting], CubeError> {
        let pos = self.position(dimension)?;
        Ok(self.postings[pos].get(label).map(Vec::as_slice).unwrap_or(&[]))
    }

    /// Documents in the (possibly partial) cell: the intersection of the
    /// posting lists of every assigned pair.
    pub fn cell_docs(&self, cell: &CubeCellRef) -> Result<BTreeSet<DocId>, CubeError> {
        let mut lists = Vec::with_capacity(cell.assignments.len());
        for (dimension, label) in &cell.assignments {
            lists.push(self.lookup(dimension, label)?);
        }
        lists.sort_by_key(|l| l.len());
        let (first, rest) = lists.split_first().expect("cell has at least one assignment");
        Ok(first
            .iter()
            .filter(|p| rest.iter().all(|l| l.binary_search_by(|q| q.doc_id.cmp(&p.doc_id)).is_ok()))
            .map(|p| p.doc_id.clone())
            .collect())
    }

    /// Label vocabulary of one dimension with posting lists, in label order.
    pub fn vocabulary(&self, dimension: &str) -> Result<impl Iterator<Item = (&Label, &[Posting])> + '_, CubeError> {
        let pos = self.position(dimension)?;
        Ok(self.postings[pos].iter().map(|(l, p)| (l, p.as_slice())))
    }

    pub fn vocabulary_size(&self, dimension: &str) -> Result<usize, CubeError> {
        Ok(self.postings[self.position(dimension)?].len())
    }

    pub fn doc(&self, id: &DocId) -> Option<&DocumentRecord> {
        self.docs.get(id)
    }

    pub fn docs(&self) -> impl ExactSizeIterator<Item = &DocumentRecord> + '_ {
        self.docs.values()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Merges an independently built shard over the same schema.
    ///
    /// The result is independent of merge order: posting lists stay sorted
    /// by doc id and duplicate documents are rejected.
    pub fn merge(mut self, other: HypercubeIndex) -> Result<HypercubeIndex, CubeError> {
        if self.dimensions != other.dimensions {
            return Err(CubeError::SchemaMismatch);
        }
        if let Some(dup) = other.docs.keys().find(|id| self.docs.contains_key(*id)) {
            return Err(CubeError::DuplicateDocument(dup.clone()));
        }
        for (mine, theirs) in self.postings.iter_mut().zip(other.postings) {
            for (label, list) in theirs {
                match mine.get_mut(&label) {
                    None => {
                        mine.insert(label, list);
                    }
                    Some(existing) => {
                        let merged = merge_sorted(std::mem::take(existing), list);
                        *existing = merged;
                    }
                }
            }
        }
        self.docs.extend(other.docs);
        Ok(self)
    }
}

fn merge_sorted(a: Vec<Posting>, b: Vec<Posting>) -> Vec<Posting> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut a = a.into_iter().peekable();
    let mut b = b.into_iter().peekable();
    loop {
        let take_a = match (a.peek(), b.peek()) {
            (Some(x), Some(y)) => x.doc_id <= y.doc_id,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        out.push(if take_a { a.next() } else { b.next() }.expect("peeked"));
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn label(s: &str) -> Label {
        Label::new(s).unwrap()
    }

    pub(crate) fn dim(name: &str) -> DimensionSchema {
        DimensionSchema::new(name, format!("{name} entities"), "Extract: {document}").unwrap()
    }

    pub(crate) fn case_schema() -> Vec<DimensionSchema> {
        vec![dim("location"), dim("event"), dim("theme")]
    }

    fn table5_index() -> HypercubeIndex {
        let mut index = HypercubeIndex::new(case_schema()).unwrap();
        index
            .add_document(
                DocumentRecord::new("565", "")
                    .with_label("location", label("melbourne beach"), 1)
                    .with_label("event", label("tropical storm fay"), 1)
                    .with_label("theme", label("rain"), 5),
            )
            .unwrap();
        index
            .add_document(DocumentRecord::new("246", "").with_label("location", label("florida"), 1).with_label(
                "event",
                label("tropical storm fay"),
                1,
            ))
            .unwrap();
        index.add_document(DocumentRecord::new("535", "").with_label("location", label("florida"), 1)).unwrap();
        index
    }

    #[test]
    fn add_document_makes_labels_retrievable() {
        let index = table5_index();
        let rain = index.lookup("theme", &label("rain")).unwrap();
        assert_eq!(rain, &[Posting { doc_id: "565".into(), count: 5 }]);
        let fay: Vec<_> =
            index.lookup("event", &label("tropical storm fay")).unwrap().iter().map(|p| p.doc_id.as_str()).collect();
        assert_eq!(fay, ["246", "565"]);
    }

    #[test]
    fn absent_label_is_empty() {
        let index = table5_index();
        assert!(index.lookup("location", &label("atlantis")).unwrap().is_empty());
    }

    #[test]
    fn unlabelled_document_is_stored_but_unreachable() {
        let mut index = HypercubeIndex::new(case_schema()).unwrap();
        index.add_document(DocumentRecord::new("x", "text")).unwrap();
        assert_eq!(index.len(), 1);
        for d in ["location", "event", "theme"] {
            assert_eq!(index.vocabulary_size(d).unwrap(), 0);
        }
    }

    #[test]
    fn duplicate_and_unknown_dimension_rejected() {
        let mut index = table5_index();
        let err = index.add_document(DocumentRecord::new("565", "")).unwrap_err();
        assert!(matches!(err, CubeError::DuplicateDocument(ref id) if id.as_str() == "565"));

        let err = index.add_document(DocumentRecord::new("9", "").with_label("planet", label("mars"), 1)).unwrap_err();
        assert!(err.to_string().contains("planet"));
        assert!(index.doc(&"9".into()).is_none());

        let err = index.lookup("planet", &label("mars")).unwrap_err();
        assert!(err.to_string().contains("location, event, theme"));
    }

    #[test]
    fn zero_counts_rejected() {
        let mut index = table5_index();
        let err = index.add_document(DocumentRecord::new("9", "").with_label("theme", label("rain"), 0)).unwrap_err();
        assert!(matches!(err, CubeError::ZeroCount { .. }));
    }

    #[test]
    fn cell_intersection() {
        let index = table5_index();
        let cell =
            CubeCellRef::new([("location", label("melbourne beach")), ("event", label("tropical storm fay"))]).unwrap();
        let docs: Vec<_> = index.cell_docs(&cell).unwrap().into_iter().collect();
        assert_eq!(docs, [DocId::from("565")]);

        let single = CubeCellRef::new([("location", label("florida"))]).unwrap();
        let from_lookup: BTreeSet<DocId> =
            index.lookup("location", &label("florida")).unwrap().iter().map(|p| p.doc_id.clone()).collect();
        assert_eq!(index.cell_docs(&single).unwrap(), from_lookup);

        assert!(matches!(CubeCellRef::new(Vec::<(String, Label)>::new()), Err(CubeError::EmptyCell)));
    }

    #[test]
    fn schema_validation() {
        assert!(DimensionSchema::new("Location", "", "{document}").is_err());
        assert!(DimensionSchema::new("", "", "{document}").is_err());
        assert!(DimensionSchema::new("my dim", "", "{document}").is_err());
        assert!(DimensionSchema::new("location", "", "no placeholder").is_err());
        assert!(DimensionSchema::new("location", "", "{document} {document}").is_err());
        assert!(DimensionSchema::new("organizations_research", "", "{document}").is_ok());
        assert!(HypercubeIndex::new(vec![dim("a"), dim("a")]).is_err());
        assert_eq!(
            normalize_dimension_name(" Organizations / Research-Initiatives ").as_deref(),
            Some("organizations_research_initiatives")
        );
    }

    /// Random corpus over a small vocabulary so labels are shared.
    pub(crate) fn random_records(seed: u64, n_docs: usize) -> Vec<DocumentRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = ["location", "event", "theme"];
        (0..n_docs)
            .map(|i| {
                let mut rec = DocumentRecord::new(format!("d{:03}", rng.random_range(0..1000) * 1000 + i), "");
                for d in dims {
                    for _ in 0..rng.random_range(0..4) {
                        let l = label(&format!("{d}{}", rng.random_range(0..12)));
                        rec.add_label(d, l, rng.random_range(1..4));
                    }
                }
                rec
            })
            .collect()
    }

    fn scan(records: &[DocumentRecord], dimension: &str, l: &Label) -> Vec<Posting> {
        let mut out: Vec<Posting> = records
            .iter()
            .filter_map(|r| {
                let c = r.count(dimension, l);
                (c > 0).then(|| Posting { doc_id: r.doc_id.clone(), count: c })
            })
            .collect();
        out.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn lookup_equals_scan(seed in any::<u64>(), n in 0usize..200) {
            let records = random_records(seed, n);
            let mut index = HypercubeIndex::new(case_schema()).unwrap();
            for r in &records {
                index.add_document(r.clone()).unwrap();
            }
            for d in ["location", "event", "theme"] {
                for i in 0..14 {
                    let l = label(&format!("{d}{i}"));
                    let expected = scan(&records, d, &l);
                    prop_assert_eq!(index.lookup(d, &l).unwrap(), expected.as_slice());
                }
            }
        }

        #[test]
        fn cells_equal_scan_intersection(seed in any::<u64>(), a in 0usize..12, b in 0usize..12) {
            let records = random_records(seed, 120);
            let mut index = HypercubeIndex::new(case_schema()).unwrap();
            for r in &records {
                index.add_document(r.clone()).unwrap();
            }
            let (la, lb) = (label(&format!("location{a}")), label(&format!("theme{b}")));
            let cell = CubeCellRef::new([("location", la.clone()), ("theme", lb.clone())]).unwrap();
            let expected: BTreeSet<DocId> = records
                .iter()
                .filter(|r| r.has_label("location", &la) && r.has_label("theme", &lb))
                .map(|r| r.doc_id.clone())
                .collect();
            prop_assert_eq!(index.cell_docs(&cell).unwrap(), expected);
        }

        #[test]
        fn insertion_order_and_sharding_do_not_matter(seed in any::<u64>(), split in 0usize..60) {
            let records = random_records(seed, 60);
            let mut forward = HypercubeIndex::new(case_schema()).unwrap();
            for r in &records {
                forward.add_document(r.clone()).unwrap();
            }
            let mut backward = HypercubeIndex::new(case_schema()).unwrap();
            for r in records.iter().rev() {
                backward.add_document(r.clone()).unwrap();
            }
            prop_assert_eq!(&forward, &backward);

            let mut left = HypercubeIndex::new(case_schema()).unwrap();
            let mut right = HypercubeIndex::new(case_schema()).unwrap();
            for (i, r) in records.iter().enumerate() {
                if i < split { left.add_document(r.clone()).unwrap() } else { right.add_document(r.clone()).unwrap() }
            }
            let merged = right.merge(left).unwrap();
            prop_assert_eq!(&forward, &merged);
        }
    }
}
