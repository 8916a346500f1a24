use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A normalized cube coordinate on one dimension.
///
/// Construction always goes through [`normalize_label`], so a `Label` is never
/// empty and re-normalizing it is a no-op.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    /// Normalizes `raw`; `None` when nothing survives normalization.
    pub fn new(raw: &str) -> Option<Label> {
        normalize_label(raw)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Number of whitespace-separated tokens.
    pub fn token_len(&self) -> usize {
        self.0.split(' ').count()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Label {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for Label {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<Label> for String {
    fn from(label: Label) -> String {
        label.0
    }
}

impl TryFrom<String> for Label {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        match normalize_label(&value) {
            Some(label) if label.0 == value => Ok(label),
            Some(label) => Err(format!("label {value:?} is not normalized (expected {:?})", label.0)),
            None => Err("empty label".to_string()),
        }
    }
}

/// Case-folds, collapses whitespace and strips punctuation from both ends.
///
/// Internal punctuation is kept ("u.s. army" stays as is). Returns `None` for
/// input that normalizes to the empty string.
pub fn normalize_label(raw: &str) -> Option<Label> {
    let lowered = raw.to_lowercase();
    let mut collapsed = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !collapsed.is_empty() {
            collapsed.push(' ');
        }
        collapsed.push_str(word);
    }
    let trimmed = collapsed.trim_matches(|c: char| is_punctuation(c) || c.is_whitespace());
    if trimmed.is_empty() {
        None
    } else {
        Some(Label(trimmed.to_string()))
    }
}

/// ASCII punctuation plus the common Unicode quote, dash and bracket marks.
pub(crate) fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    matches!(
        c,
        '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}'
            | '\u{3008}'..='\u{3011}'
            | '\u{FF01}'..='\u{FF0F}'
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_point() {
        assert_eq!(normalize_label("rain").unwrap().as_str(), "rain");
    }

    #[test]
    fn rule_application() {
        assert_eq!(normalize_label("  Tropical Storm Fay.").unwrap().as_str(), "tropical storm fay");
        assert_eq!(normalize_label("Melbourne   Beach, Fl.").unwrap().as_str(), "melbourne beach, fl");
        assert_eq!(normalize_label("“Rain”").unwrap().as_str(), "rain");
        assert_eq!(normalize_label("U.S. Army").unwrap().as_str(), "u.s. army");
    }

    #[test]
    fn empty_results_are_dropped() {
        assert!(normalize_label("").is_none());
        assert!(normalize_label("   \t\n").is_none());
        assert!(normalize_label(" ... , ").is_none());
    }

    #[test]
    fn deserialize_rejects_unnormalized() {
        assert!(serde_json::from_str::<Label>("\"rain\"").is_ok());
        assert!(serde_json::from_str::<Label>("\"Rain\"").is_err());
        assert!(serde_json::from_str::<Label>("\"\"").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn idempotent(raw in "\\PC{0,24}") {
            if let Some(once) = normalize_label(&raw) {
                let twice = normalize_label(once.as_str()).expect("normalized label re-normalizes");
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn idempotent_on_wordy_input(raw in "[ .,;:!?'\"A-Za-z\t-]{0,30}") {
            if let Some(once) = normalize_label(&raw) {
                prop_assert_eq!(normalize_label(once.as_str()), Some(once.clone()));
                prop_assert!(!once.as_str().is_empty());
            }
        }
    }
}
