//! Coverage-tier ranking and per-document explanations.
//!
//! Documents covering every active component form the full tier and come
//! first; the rest follow by partial coverage. Within and across tiers the
//! order is (coverage desc, exact_score desc, freq_sum desc, doc_id asc), a
//! total order, so equal inputs always rank identically.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cube::{CubeError, DocId, HypercubeIndex, Label};
use crate::retrieval::{MatchResult, QueryComponent, Retrieval, RetrievalConfig, RetrievalStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Full,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: DocId,
    pub coverage: usize,
    pub exact_score: u32,
    pub freq_sum: u64,
    pub tier: Tier,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn doc_ids(&self) -> Vec<&DocId> {
        self.entries.iter().map(|e| &e.doc_id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The ranking order: better candidates compare as `Less`.
pub fn compare(a: &MatchResult, b: &MatchResult) -> Ordering {
    b.coverage()
        .cmp(&a.coverage())
        .then(b.exact_score.cmp(&a.exact_score))
        .then(b.freq_sum.cmp(&a.freq_sum))
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Orders candidates and keeps the best `top_k`. Zero-coverage candidates
/// are dropped.
pub fn rank(candidates: &[MatchResult], n_components: usize, top_k: usize) -> RankedList {
    let mut kept: Vec<&MatchResult> = candidates.iter().filter(|m| m.coverage() > 0).collect();
    kept.sort_by(|a, b| compare(a, b));
    kept.truncate(top_k);
    let entries = kept
        .into_iter()
        .map(|m| RankedEntry {
            doc_id: m.doc_id.clone(),
            coverage: m.coverage(),
            exact_score: m.exact_score,
            freq_sum: m.freq_sum,
            tier: if m.coverage() >= n_components { Tier::Full } else { Tier::Partial },
        })
        .collect();
    RankedList { entries }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvidence {
    /// Occurrences of the label in the document.
    pub count: u32,
    /// Components the label satisfied.
    pub components: Vec<usize>,
}

/// Matched labels of one document, per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub doc_id: DocId,
    pub matches: BTreeMap<String, BTreeMap<Label, LabelEvidence>>,
}

/// Which of the document's labels satisfied which components.
pub fn explain(
    matched: &MatchResult,
    index: &HypercubeIndex,
    components: &[QueryComponent],
) -> Result<Explanation, CubeError> {
    let doc = index.doc(&matched.doc_id).ok_or_else(|| CubeError::UnknownDocument(matched.doc_id.clone()))?;
    let mut matches: BTreeMap<String, BTreeMap<Label, LabelEvidence>> = BTreeMap::new();
    let mut note = |dimension: &str, label: &Label, component: usize| {
        let evidence = matches
            .entry(dimension.to_string())
            .or_default()
            .entry(label.clone())
            .or_insert_with(|| LabelEvidence { count: doc.count(dimension, label), components: Vec::new() });
        if !evidence.components.contains(&component) {
            evidence.components.push(component);
            evidence.components.sort_unstable();
        }
    };
    for &i in &matched.covered {
        let c = &components[i];
        if doc.has_label(&c.dimension, &c.content) {
            note(&c.dimension, &c.content, i);
        }
    }
    for hit in &matched.semantic_hits {
        note(&components[hit.component].dimension, &hit.label, hit.component);
    }
    Ok(Explanation { doc_id: matched.doc_id.clone(), matches })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub rank: usize,
    #[serde(flatten)]
    pub entry: RankedEntry,
    pub explanation: Explanation,
}

/// Ranked results with their evidence, as emitted by `retrieve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub components: Vec<QueryComponent>,
    pub dimensions: Vec<String>,
    pub config: RetrievalConfig,
    pub n_components: usize,
    pub results: Vec<ReportRow>,
    pub stats: RetrievalStats,
}

impl RetrievalReport {
    pub fn new(
        query: Option<String>,
        components: &[QueryComponent],
        config: &RetrievalConfig,
        retrieval: &Retrieval,
        index: &HypercubeIndex,
    ) -> Result<Self, CubeError> {
        let ranked = rank(&retrieval.matches, retrieval.n_components, config.top_k);
        let by_id: BTreeMap<&DocId, &MatchResult> = retrieval.matches.iter().map(|m| (&m.doc_id, m)).collect();
        let results = ranked
            .entries
            .into_iter()
            .enumerate()
            .map(|(i, entry)| {
                let explanation = explain(by_id[&entry.doc_id], index, components)?;
                Ok(ReportRow { rank: i + 1, entry, explanation })
            })
            .collect::<Result<_, CubeError>>()?;
        Ok(RetrievalReport {
            query,
            components: components.to_vec(),
            dimensions: index.dimension_names(),
            config: config.clone(),
            n_components: retrieval.n_components,
            results,
            stats: retrieval.stats,
        })
    }

    pub fn doc_ids(&self) -> Vec<&DocId> {
        self.results.iter().map(|r| &r.entry.doc_id).collect()
    }

    /// One aligned row per document: id, coverage, then the matched labels
    /// with their counts under each dimension.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Doc ID".to_string(), "Coverage".to_string()];
        header.extend(self.dimensions.iter().cloned());
        let mut rows = vec![header];
        for r in &self.results {
            let mut row = vec![r.entry.doc_id.to_string(), format!("{}/{}", r.entry.coverage, self.n_components)];
            for d in &self.dimensions {
                let cell = r
                    .explanation
                    .matches
                    .get(d)
                    .map(|labels| {
                        labels.iter().map(|(l, e)| format!("{l} ({})", e.count)).collect::<Vec<_>>().join("; ")
                    })
                    .unwrap_or_default();
                row.push(if cell.is_empty() { "-".into() } else { cell });
            }
            rows.push(row);
        }
        render_aligned(&rows)
    }
}

/// Left-aligned columns separated by two spaces, with a rule under the
/// header row.
pub fn render_aligned(rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(cell, &w)| format!("{cell:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "{}", rule.join("  "));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::tests::{case_schema, label};
    use crate::cube::DocumentRecord;
    use crate::llm::ToyEmbedder;
    use crate::retrieval::Retriever;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn m(id: &str, covered: &[usize], exact: u32, freq: u64) -> MatchResult {
        MatchResult {
            doc_id: id.into(),
            covered: covered.iter().copied().collect(),
            exact_score: exact,
            semantic_hits: Vec::new(),
            freq_sum: freq,
        }
    }

    #[test]
    fn case_study_order() {
        let cands = [m("535", &[0], 1, 1), m("565", &[0, 1, 2], 2, 7), m("246", &[1], 1, 1)];
        let ranked = rank(&cands, 3, 3);
        let ids: Vec<&str> = ranked.entries.iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids, ["565", "246", "535"]);
        assert_eq!(ranked.entries[0].tier, Tier::Full);
        assert_eq!(ranked.entries[1].tier, Tier::Partial);
    }

    #[test]
    fn single_and_empty() {
        assert_eq!(rank(&[m("1", &[0], 1, 1)], 1, 5).doc_ids(), [&DocId::from("1")]);
        assert!(rank(&[], 2, 5).is_empty());
        assert!(rank(&[m("1", &[], 0, 0)], 2, 5).is_empty());
    }

    #[test]
    fn table5_explanation() {
        let mut index = HypercubeIndex::new(case_schema()).unwrap();
        index
            .add_document(
                DocumentRecord::new("565", "")
                    .with_label("location", label("melbourne beach"), 1)
                    .with_label("location", label("space coast"), 2)
                    .with_label("event", label("tropical storm fay"), 1)
                    .with_label("theme", label("rain"), 5),
            )
            .unwrap();
        let comps = [
            QueryComponent::new("location", "melbourne beach").unwrap(),
            QueryComponent::new("event", "tropical storm fay").unwrap(),
            QueryComponent::new("theme", "rainfall").unwrap(),
        ];
        let embedder = ToyEmbedder::default();
        let config = RetrievalConfig { tau: 0.5, ..RetrievalConfig::default() };
        let retrieval = Retriever::new(&index, &embedder).retrieve(&comps, &config).unwrap();
        let e = explain(&retrieval.matches[0], &index, &comps).unwrap();
        let flat: Vec<(&str, &str, u32, Vec<usize>)> = e
            .matches
            .iter()
            .flat_map(|(d, ls)| ls.iter().map(move |(l, ev)| (d.as_str(), l.as_str(), ev.count, ev.components.clone())))
            .collect();
        assert_eq!(
            flat,
            [
                ("event", "tropical storm fay", 1, vec![1]),
                ("location", "melbourne beach", 1, vec![0]),
                ("theme", "rain", 5, vec![2]),
            ]
        );

        let report = RetrievalReport::new(None, &comps, &config, &retrieval, &index).unwrap();
        let table = report.to_table();
        assert!(table.contains("melbourne beach (1)") && table.contains("rain (5)"), "{table}");
        assert!(table.lines().nth(2).unwrap().starts_with("565"));

        let unknown = m("404", &[0], 1, 1);
        assert!(matches!(explain(&unknown, &index, &comps), Err(CubeError::UnknownDocument(_))));
        let none = explain(&m("565", &[], 0, 0), &index, &comps).unwrap();
        assert!(none.matches.is_empty());
    }

    fn arb_candidates() -> impl Strategy<Value = (Vec<MatchResult>, usize)> {
        (1usize..5)
            .prop_flat_map(|n| {
                let cand =
                    (0u32..200, prop::collection::btree_set(0..n, 0..=n), 0u64..6).prop_map(move |(id, cov, freq)| {
                        let exact = cov.len() as u32 / 2;
                        m(&format!("d{id}"), &cov.into_iter().collect::<Vec<_>>(), exact, freq)
                    });
                (prop::collection::vec(cand, 0..30), Just(n))
            })
            .prop_map(|(mut cands, n)| {
                let mut seen = BTreeSet::new();
                cands.retain(|c| seen.insert(c.doc_id.clone()));
                (cands, n)
            })
    }

    /// Independent reference: tiers separately, each sorted by key tuples.
    fn reference(cands: &[MatchResult], n: usize, k: usize) -> Vec<DocId> {
        let key = |c: &MatchResult| {
            (
                std::cmp::Reverse(c.covered.len()),
                std::cmp::Reverse(c.exact_score),
                std::cmp::Reverse(c.freq_sum),
                c.doc_id.clone(),
            )
        };
        let mut full: Vec<&MatchResult> = cands.iter().filter(|c| c.covered.len() == n).collect();
        let mut partial: Vec<&MatchResult> =
            cands.iter().filter(|c| !c.covered.is_empty() && c.covered.len() < n).collect();
        full.sort_by_key(|c| key(c));
        partial.sort_by_key(|c| key(c));
        full.into_iter().chain(partial).take(k).map(|c| c.doc_id.clone()).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn ranking_invariants((cands, n) in arb_candidates(), k in 1usize..12) {
            let ranked = rank(&cands, n, k);
            prop_assert!(ranked.len() <= k);
            let ids: Vec<DocId> = ranked.entries.iter().map(|e| e.doc_id.clone()).collect();
            prop_assert_eq!(&ids, &reference(&cands, n, k));
            let first_partial = ranked.entries.iter().position(|e| e.tier == Tier::Partial).unwrap_or(ranked.len());
            prop_assert!(ranked.entries[first_partial..].iter().all(|e| e.tier == Tier::Partial));
            let longer = rank(&cands, n, k + 1);
            prop_assert_eq!(&longer.entries[..ranked.len()], &ranked.entries[..]);
            let mut with_zero = cands.clone();
            with_zero.push(m("zzz-unmatched", &[], 0, 9));
            prop_assert_eq!(rank(&with_zero, n, k), ranked.clone());
            prop_assert_eq!(rank(&cands, n, k), ranked);
        }
    }
}
