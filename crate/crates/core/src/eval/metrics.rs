//! Retrieval and answer metrics. Rates are kept as exact hit counts over a
//! denominator so tests can compare rationals, not floats.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::cube::{normalize_label, DocId};
use crate::llm::{cosine, Embedder};

use super::EvalError;

/// `hits / denominator`; an empty denominator reads as 1 and is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub hits: usize,
    pub denominator: usize,
}

impl Ratio {
    pub fn new(hits: usize, denominator: usize) -> Self {
        Ratio { hits, denominator }
    }

    pub fn value(&self) -> f64 {
        if self.denominator == 0 {
            1.0
        } else {
            self.hits as f64 / self.denominator as f64
        }
    }

    /// Set when the value is a convention rather than a measurement.
    pub fn flagged(&self) -> bool {
        self.denominator == 0
    }
}

/// What recall means when the gold set is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyGold {
    /// Recall 1, flagged.
    #[default]
    TreatAsPerfect,
    Error,
}

fn hits(retrieved: &[DocId], gold: &BTreeSet<DocId>, k: usize) -> usize {
    let mut seen = BTreeSet::new();
    retrieved.iter().take(k).filter(|d| gold.contains(*d) && seen.insert(*d)).count()
}

/// `|top-k ∩ gold| / k`.
pub fn precision_at_k(retrieved: &[DocId], gold: &BTreeSet<DocId>, k: usize) -> Result<Ratio, EvalError> {
    if k == 0 {
        return Err(EvalError::Config("k must be at least 1".into()));
    }
    Ok(Ratio::new(hits(retrieved, gold, k), k))
}

/// `|top-k ∩ gold| / |gold|`.
pub fn recall_at_k(
    retrieved: &[DocId],
    gold: &BTreeSet<DocId>,
    k: usize,
    empty_gold: EmptyGold,
) -> Result<Ratio, EvalError> {
    if k == 0 {
        return Err(EvalError::Config("k must be at least 1".into()));
    }
    if gold.is_empty() && empty_gold == EmptyGold::Error {
        return Err(EvalError::EmptyGold);
    }
    Ok(Ratio::new(hits(retrieved, gold, k), gold.len()))
}

/// Token-overlap F1 as exact counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenF1 {
    pub common: usize,
    pub pred_len: usize,
    pub gold_len: usize,
}

impl TokenF1 {
    /// `2·common / (pred_len + gold_len)`; 1 when both are empty (flagged).
    pub fn value(&self) -> f64 {
        let total = self.pred_len + self.gold_len;
        if total == 0 {
            1.0
        } else {
            2.0 * self.common as f64 / total as f64
        }
    }

    pub fn flagged(&self) -> bool {
        self.pred_len + self.gold_len == 0
    }
}

fn answer_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(normalize_label).map(String::from).collect()
}

/// Multiset token overlap between a predicted and a gold answer.
pub fn token_f1(pred: &str, gold: &str) -> TokenF1 {
    let p = answer_tokens(pred);
    let g = answer_tokens(gold);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    TokenF1 { common, pred_len: p.len(), gold_len: g.len() }
}

/// `(1 + cos) / 2` between answer embeddings, in `[0, 1]`.
pub fn semantic_score(pred: &str, gold: &str, embedder: &dyn Embedder) -> Result<f64, EvalError> {
    let v = embedder.embed(&[pred, gold]).map_err(EvalError::Llm)?;
    Ok((1.0 + cosine(&v[0], &v[1])) / 2.0)
}

/// Mean, median and 95th percentile (nearest rank) of latency samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

pub fn median(samples: &[f64]) -> f64 {
    LatencyStats::from_samples(samples).p50_ms
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let p50 = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        LatencyStats { mean_ms: s.iter().sum::<f64>() / n as f64, p50_ms: p50, p95_ms: s[rank - 1] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ToyEmbedder;
    use proptest::prelude::*;

    fn ids(v: &[&str]) -> Vec<DocId> {
        v.iter().map(|s| DocId::from(*s)).collect()
    }

    fn set(v: &[&str]) -> BTreeSet<DocId> {
        ids(v).into_iter().collect()
    }

    #[test]
    fn worked_example() {
        let r = ids(&["565", "246", "535"]);
        assert_eq!(precision_at_k(&r, &set(&["565"]), 3).unwrap(), Ratio::new(1, 3));
        assert_eq!(recall_at_k(&r, &set(&["565"]), 3, EmptyGold::Error).unwrap(), Ratio::new(1, 1));
    }

    #[test]
    fn exact_and_disjoint() {
        let r = ids(&["a", "b"]);
        assert_eq!(precision_at_k(&r, &set(&["a", "b"]), 2).unwrap().value(), 1.0);
        assert_eq!(recall_at_k(&r, &set(&["a", "b"]), 2, EmptyGold::Error).unwrap().value(), 1.0);
        assert_eq!(precision_at_k(&r, &set(&["c"]), 2).unwrap().value(), 0.0);
        assert_eq!(recall_at_k(&r, &set(&["c"]), 2, EmptyGold::Error).unwrap().value(), 0.0);
    }

    #[test]
    fn short_lists_still_divide_by_k() {
        assert_eq!(precision_at_k(&ids(&["a"]), &set(&["a"]), 5).unwrap(), Ratio::new(1, 5));
        assert_eq!(precision_at_k(&ids(&["a", "a"]), &set(&["a"]), 5).unwrap(), Ratio::new(1, 5));
    }

    #[test]
    fn invalid_k_and_empty_gold() {
        assert!(precision_at_k(&[], &set(&["a"]), 0).is_err());
        assert!(matches!(recall_at_k(&[], &set(&[]), 3, EmptyGold::Error), Err(EvalError::EmptyGold)));
        let r = recall_at_k(&[], &set(&[]), 3, EmptyGold::TreatAsPerfect).unwrap();
        assert!(r.flagged() && r.value() == 1.0);
    }

    #[test]
    fn f1_examples() {
        let f = token_f1("25.28 inches", "25.28 inches of rain");
        assert_eq!(f, TokenF1 { common: 2, pred_len: 2, gold_len: 4 });
        assert_eq!(f.value(), 2.0 / 3.0);
        assert_eq!(token_f1("Rain, rain.", "rain rain").value(), 1.0);
        let both = token_f1("", " ");
        assert!(both.flagged() && both.value() == 1.0);
        assert_eq!(token_f1("", "x").value(), 0.0);
    }

    #[test]
    fn semantic_self_score_is_one() {
        let e = ToyEmbedder::default();
        assert_eq!(semantic_score("25.28 inches", "25.28 inches", &e).unwrap(), 1.0);
        let s = semantic_score("25.28 inches", "no idea", &e).unwrap();
        assert!((0.0..1.0).contains(&s));
    }

    #[test]
    fn latency_stats() {
        let s = LatencyStats::from_samples(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((s.mean_ms, s.p50_ms, s.p95_ms), (2.5, 2.5, 4.0));
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
    }

    proptest! {
        #[test]
        fn f1_symmetric_and_one_iff_equal_multisets(a in prop::collection::vec(0u8..5, 0..8), b in prop::collection::vec(0u8..5, 0..8)) {
            let text = |v: &[u8]| v.iter().map(|x| format!("w{x}")).collect::<Vec<_>>().join(" ");
            let (ta, tb) = (text(&a), text(&b));
            let (fab, fba) = (token_f1(&ta, &tb), token_f1(&tb, &ta));
            prop_assert_eq!(fab.value(), fba.value());
            let (mut sa, mut sb) = (a.clone(), b.clone());
            sa.sort_unstable();
            sb.sort_unstable();
            prop_assert_eq!(fab.value() == 1.0, sa == sb);
        }

        #[test]
        fn rates_count_hits(r in prop::collection::vec(0u8..10, 0..10), g in prop::collection::btree_set(0u8..10, 1..5), k in 1usize..8) {
            let r: Vec<DocId> = r.iter().map(|x| DocId::new(x.to_string())).collect();
            let g: BTreeSet<DocId> = g.iter().map(|x| DocId::new(x.to_string())).collect();
            let p = precision_at_k(&r, &g, k).unwrap();
            let rec = recall_at_k(&r, &g, k, EmptyGold::Error).unwrap();
            prop_assert!(p.hits <= k && rec.hits <= g.len());
            prop_assert_eq!(p.hits, rec.hits);
            prop_assert!((0.0..=1.0).contains(&p.value()) && (0.0..=1.0).contains(&rec.value()));
        }
    }
}
