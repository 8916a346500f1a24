use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::cube::{normalize_label, Label, LabelCounts};

use super::ExtractionError;

/// Canonical phrases for one dimension plus alias → canonical mappings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GazetteerDimension {
    canonicals: BTreeSet<Label>,
    aliases: BTreeMap<Label, Label>,
    /// Every surface form, longest first, then lexicographic.
    phrases: Vec<(Label, Label)>,
}

impl GazetteerDimension {
    pub fn canonicals(&self) -> &BTreeSet<Label> {
        &self.canonicals
    }

    pub fn aliases(&self) -> &BTreeMap<Label, Label> {
        &self.aliases
    }

    fn rebuild_phrases(&mut self) {
        let mut phrases: Vec<(Label, Label)> = self
            .canonicals
            .iter()
            .map(|c| (c.clone(), c.clone()))
            .chain(self.aliases.iter().map(|(a, c)| (a.clone(), c.clone())))
            .collect();
        phrases.sort_by(|(a, _), (b, _)| {
            b.as_str().chars().count().cmp(&a.as_str().chars().count()).then_with(|| a.cmp(b))
        });
        self.phrases = phrases;
    }
}

/// Fixed per-dimension phrase lexicon used as a deterministic extraction
/// backend.
///
/// File format: one JSON object keyed by dimension, each mapping a canonical
/// phrase to its list of aliases:
///
/// ```json
/// {"location": {"melbourne beach": ["melbourne beach, florida"], "florida": []}}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    dimensions: BTreeMap<String, GazetteerDimension>,
}

impl Gazetteer {
    pub fn new() -> Self {
        Gazetteer::default()
    }

    /// Adds a canonical phrase with its aliases. Aliases already claimed by a
    /// different canonical, or equal to another canonical, are rejected.
    pub fn add(&mut self, dimension: &str, canonical: &str, aliases: &[&str]) -> Result<(), ExtractionError> {
        let bad = |what: String| ExtractionError::Gazetteer(format!("{dimension}: {what}"));
        let canonical = normalize_label(canonical).ok_or_else(|| bad("empty canonical".into()))?;
        let entry = self.dimensions.entry(dimension.to_string()).or_default();
        if let Some(owner) = entry.aliases.get(&canonical) {
            return Err(bad(format!("{canonical:?} is already an alias of {owner:?}")));
        }
        for alias in aliases {
            let alias = normalize_label(alias).ok_or_else(|| bad("empty alias".into()))?;
            if alias == canonical {
                continue;
            }
            if entry.canonicals.contains(&alias) {
                return Err(bad(format!("alias {alias:?} is itself a canonical phrase")));
            }
            match entry.aliases.get(&alias) {
                Some(owner) if *owner != canonical => {
                    return Err(bad(format!("alias {alias:?} maps to both {owner:?} and {canonical:?}")))
                }
                _ => {
                    entry.aliases.insert(alias, canonical.clone());
                }
            }
        }
        entry.canonicals.insert(canonical);
        entry.rebuild_phrases();
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Gazetteer, ExtractionError> {
        let raw: BTreeMap<String, BTreeMap<String, Vec<String>>> =
            serde_json::from_str(text).map_err(|e| ExtractionError::Gazetteer(e.to_string()))?;
        let mut gazetteer = Gazetteer::new();
        for (dimension, entries) in raw {
            for (canonical, aliases) in entries {
                let aliases: Vec<&str> = aliases.iter().map(String::as_str).collect();
                gazetteer.add(&dimension, &canonical, &aliases)?;
            }
        }
        Ok(gazetteer)
    }

    pub fn load(path: &Path) -> Result<Gazetteer, ExtractionError> {
        let text =
            fs::read_to_string(path).map_err(|e| ExtractionError::Gazetteer(format!("{}: {e}", path.display())))?;
        Gazetteer::from_json(&text)
    }

    pub fn dimension(&self, name: &str) -> Option<&GazetteerDimension> {
        self.dimensions.get(name)
    }

    pub fn dimension_names(&self) -> impl Iterator<Item = &str> {
        self.dimensions.keys().map(String::as_str)
    }

    /// Counts whole-phrase, case-insensitive, non-overlapping occurrences of
    /// the dimension's phrases in `text`, attributing aliases to their
    /// canonical. Longer phrases claim their span first. A dimension missing
    /// from the gazetteer yields an empty multiset.
    pub fn extract(&self, text: &str, dimension: &str) -> LabelCounts {
        let mut counts = LabelCounts::new();
        let Some(dim) = self.dimensions.get(dimension) else {
            return counts;
        };
        let haystack = fold_text(text);
        let mut claimed = vec![false; haystack.len()];
        for (phrase, canonical) in &dim.phrases {
            for (start, end) in phrase_matches(&haystack, phrase.as_str()) {
                if claimed[start..end].iter().any(|&c| c) {
                    continue;
                }
                claimed[start..end].iter_mut().for_each(|c| *c = true);
                *counts.entry(canonical.clone()).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Lowercases and collapses whitespace runs to single spaces.
pub(crate) fn fold_text(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Byte spans of whole-phrase occurrences of `phrase` in the folded
/// `haystack`, scanning left to right without overlap.
pub(crate) fn phrase_matches(haystack: &str, phrase: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if phrase.is_empty() {
        return out;
    }
    let first_len = phrase.chars().next().map_or(1, char::len_utf8);
    let mut from = 0;
    while let Some(off) = haystack[from..].find(phrase) {
        let start = from + off;
        let end = start + phrase.len();
        let before = haystack[..start].chars().next_back();
        let after = haystack[end..].chars().next();
        if !is_word_char(before) && !is_word_char(after) {
            out.push((start, end));
            from = end;
        } else {
            from = start + first_len;
        }
        if from >= haystack.len() {
            break;
        }
    }
    out
}

/// Whole-phrase occurrences of an already normalized label in raw text.
pub(crate) fn count_occurrences(text: &str, label: &Label) -> u32 {
    phrase_matches(&fold_text(text), label.as_str()).len() as u32
}
