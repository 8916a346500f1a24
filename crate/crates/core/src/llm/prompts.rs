//! Prompt templates and `{placeholder}` rendering.
//!
//! A placeholder is `{` + a lowercase identifier + `}`. Anything else in
//! braces (JSON examples in a template, say) is literal text.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LlmError;

/// Query decomposition along the cube dimensions.
pub const DECOMPOSE: &str = "decompose";
/// Untyped entity extraction for the discovery entity pool.
pub const ENTITIES: &str = "entities";
/// Generic per-dimension extraction; filled with the dimension's name and
/// description to produce a [`DimensionSchema`](crate::cube::DimensionSchema)
/// prompt.
pub const EXTRACT: &str = "extract";
/// Cluster summarization during dimension discovery.
pub const SUMMARIZE: &str = "summarize";
/// Merging cluster summaries into the final dimension list.
pub const CONSOLIDATE: &str = "consolidate";
/// Grounded answer generation.
pub const ANSWER: &str = "answer";
/// LLM-as-judge scoring.
pub const JUDGE: &str = "judge";

const DEFAULT_DECOMPOSE: &str = r#"You are an expert on question understanding. Your task is to:

1. Comprehend the given question: understand what the question asks, how to answer it step by step, and all concepts, aspects, or directions that are relevant to each step.

2. Compose queries to retrieve documents for answering the question: each document is indexed by the entities or phrases occurred inside and those entities or phrases lie within the following dimensions: {dimensions}.

For each of the above dimensions, synthesize queries that are informative, self-complete, and mostly likely to retrieve target documents for answering the question. Note that each of your queries should be an entity or a short phrase and its associated dimension.

Example Input: "How much rainfall did Melbourne Beach, Florida receive from Tropical Storm Fay?"

Example Output:
1. query_dimension: 'location'; query_content: 'Melbourne Beach';
2. query_dimension: 'event'; query_content: 'Tropical Storm Fay';
3. query_dimension: 'theme'; query_content: 'rainfall'

Input: "{question}"
Output:"#;

const DEFAULT_ENTITIES: &str = r#"Extract every named entity and salient domain phrase (places, people, organizations, events, dates, quantities, topics) from the given document. Output a single JSON array of strings and nothing else.

Document:
{document}"#;

const DEFAULT_EXTRACT: &str = r#"Please extract {description} from the given document, and save them in the following format: a single JSON array of strings, one entry per mention, e.g. ["first", "second"]. Output the JSON array only. If nothing in the document belongs to the "{dimension}" dimension, output [].

Document:
{document}"#;

const DEFAULT_SUMMARIZE: &str = r#"The following entities were grouped together by clustering their embeddings:
{entities}

Describe in one sentence what kind of entities this cluster contains, and propose a short lowercase name for that category. Output JSON only: {"name": "...", "summary": "..."}"#;

const DEFAULT_CONSOLIDATE: &str = r#"Below are candidate categories discovered by clustering the entities of a corpus, one per line as "name: summary":
{candidates}

Some candidates overlap. Merge overlapping candidates and output a small set of high-level dimensions for indexing the corpus. Output JSON only: a list of objects {"name": "...", "description": "...", "members": ["candidate name", ...]}. Every candidate name must appear in the members of exactly one dimension."#;

const DEFAULT_ANSWER: &str = r#"Answer the question based on the given retrieved documents.

Question: {question},

Retrieved documents: {documents},

Output requirements:
 - If the query asks the quantitative analysis, such as starting with "How many", "How much", "How much greater", "How wide", "What percentage", "How far", "How long", "How old", "What portion", "What depth", please directly output the quantitative answer as short as possible.
 - If the query asks specific information, such as "what percentage", "what likelihood", "which years", "who", please directly output the answer without explanation or other information."#;

const DEFAULT_JUDGE: &str = r#"Your task is to assess the predicted answer generated by AI models compared to the gold (reference) answer. Please evaluate the predicted answer on correctness and completeness.

Question: {question},
Gold Answer: {gold_answer},
Predicted Answer: {predicted_answer}.

Evaluate criteria:
1. Correctness (0 or 1):
- Score 1 if the predicted answer is generally accurate and aligns with the key points in the reference answer.
- Score 0 if it has factual errors or misrepresents key information.
2. Completeness (0 or 1):
- Score 1 if the predicted answer covers the main points present in the reference answer.
- Score 0 if it misses essential information or fails to address the core of the question.

Output your evaluation in the following JSON format:
{"correctness": int, "completeness": int, "explanation": your brief explanation}"#;

/// Placeholders each built-in template id must carry.
pub fn required_placeholders(id: &str) -> &'static [&'static str] {
    match id {
        DECOMPOSE => &["dimensions", "question"],
        ENTITIES => &["document"],
        EXTRACT => &["dimension", "description", "document"],
        SUMMARIZE => &["entities"],
        CONSOLIDATE => &["candidates"],
        ANSWER => &["question", "documents"],
        JUDGE => &["question", "gold_answer", "predicted_answer"],
        _ => &[],
    }
}

/// One prompt: template text plus sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub text: String,
    /// Overrides the client's chat model for this template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub temperature: f32,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        PromptTemplate { text: text.into(), model: None, temperature: 0.0 }
    }

    /// Renders every placeholder; a placeholder without a value is an error.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, LlmError> {
        fill(&self.text, vars, true)
    }
}

/// The editable prompt configuration, keyed by template id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let templates = [
            (DECOMPOSE, DEFAULT_DECOMPOSE),
            (ENTITIES, DEFAULT_ENTITIES),
            (EXTRACT, DEFAULT_EXTRACT),
            (SUMMARIZE, DEFAULT_SUMMARIZE),
            (CONSOLIDATE, DEFAULT_CONSOLIDATE),
            (ANSWER, DEFAULT_ANSWER),
            (JUDGE, DEFAULT_JUDGE),
        ]
        .into_iter()
        .map(|(id, text)| (id.to_string(), PromptTemplate::new(text)))
        .collect();
        PromptSet { templates }
    }
}

impl PromptSet {
    /// Loads a JSON object `{id: {text, model?, temperature?}}`. Ids absent from
    /// the file keep their built-in default.
    pub fn load(path: &Path) -> Result<PromptSet, LlmError> {
        let text = fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let overrides: BTreeMap<String, PromptTemplate> =
            serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let mut set = PromptSet::default();
        set.templates.extend(overrides);
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        for (id, template) in &self.templates {
            let present = placeholders(&template.text);
            for required in required_placeholders(id) {
                if !present.iter().any(|p| p == required) {
                    return Err(LlmError::Config(format!("prompt {id:?} lacks required placeholder {{{required}}}")));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, LlmError> {
        self.templates.get(id).ok_or_else(|| LlmError::Config(format!("no prompt template {id:?}")))
    }

    pub fn insert(&mut self, id: impl Into<String>, template: PromptTemplate) {
        self.templates.insert(id.into(), template);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Per-dimension extraction prompt with only `{document}` left open.
    pub fn dimension_prompt(&self, dimension: &str, description: &str) -> Result<String, LlmError> {
        fill(&self.get(EXTRACT)?.text, &[("dimension", dimension), ("description", description)], false)
    }
}

fn placeholder_at(text: &str, start: usize) -> Option<(&str, usize)> {
    let rest = &text[start + 1..];
    let end = rest.find('}')?;
    let name = &rest[..end];
    let mut chars = name.chars();
    let valid = matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
    valid.then_some((name, start + 1 + end + 1))
}

/// Placeholder names in order of appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        match placeholder_at(text, start) {
            Some((name, next)) => {
                out.push(name.to_string());
                i = next;
            }
            None => i = start + 1,
        }
    }
    out
}

/// Substitutes placeholders. With `strict`, a placeholder without a value is
/// an error; otherwise it is left in place.
pub fn fill(text: &str, vars: &[(&str, &str)], strict: bool) -> Result<String, LlmError> {
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        out.push_str(&text[i..start]);
        match placeholder_at(text, start) {
            Some((name, next)) => {
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None if strict => return Err(LlmError::MissingVariable(name.to_string())),
                    None => out.push_str(&text[start..next]),
                }
                i = next;
            }
            None => {
                out.push('{');
                i = start + 1;
            }
        }
    }
    out.push_str(&text[i..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let set = PromptSet::default();
        set.validate().unwrap();
        assert_eq!(set.ids().count(), 7);
    }

    #[test]
    fn json_braces_are_literal() {
        let t = PromptTemplate::new(r#"Q: {question} -> {"correctness": int}"#);
        assert_eq!(placeholders(&t.text), ["question"]);
        assert_eq!(t.render(&[("question", "why?")]).unwrap(), r#"Q: why? -> {"correctness": int}"#);
    }

    #[test]
    fn missing_variable_is_an_error() {
        let t = PromptTemplate::new("{question} {documents}");
        let err = t.render(&[("question", "q")]).unwrap_err();
        assert!(matches!(err, LlmError::MissingVariable(ref v) if v == "documents"));
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = PromptTemplate::new("{a}{b}");
        assert_eq!(t.render(&[("a", "{b}"), ("b", "x")]).unwrap(), "{b}x");
    }

    #[test]
    fn dimension_prompt_leaves_document_open() {
        let set = PromptSet::default();
        let p = set.dimension_prompt("location", "countries, states and cities").unwrap();
        assert_eq!(placeholders(&p), ["document"]);
        assert!(p.contains("countries, states and cities"));
    }

    #[test]
    fn load_rejects_template_without_required_placeholder() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.json");
        std::fs::write(&path, r#"{"answer": {"text": "just answer {question}"}}"#).unwrap();
        assert!(PromptSet::load(&path).is_err());
        std::fs::write(&path, r#"{"answer": {"text": "{question} / {documents}", "model": "m"}}"#).unwrap();
        let set = PromptSet::load(&path).unwrap();
        assert_eq!(set.get(ANSWER).unwrap().model.as_deref(), Some("m"));
        assert!(set.get(JUDGE).is_ok());
    }
}
