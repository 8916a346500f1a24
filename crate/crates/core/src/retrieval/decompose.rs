use std::collections::HashMap;

use serde::Deserialize;

use crate::cube::{normalize_dimension_name, normalize_label, DimensionSchema, HypercubeIndex, Label};
use crate::llm::prompts::DECOMPOSE;
use crate::llm::LlmClient;

use super::{QueryComponent, RetrievalError};

/// Longest query n-gram tried against the label vocabulary.
pub const MAX_NGRAM: usize = 5;

/// Asks the chat backend to split `question` into per-dimension components.
///
/// The reply may be the numbered `query_dimension: '...'; query_content:
/// '...'` list the default prompt asks for, or a JSON array of
/// `{"dimension", "content"}` objects. Components naming a dimension outside
/// `schema` are dropped with a warning.
pub fn decompose_query(
    question: &str,
    schema: &[DimensionSchema],
    llm: &LlmClient,
) -> Result<Vec<QueryComponent>, RetrievalError> {
    if schema.is_empty() {
        return Err(RetrievalError::Config("schema has no dimensions".into()));
    }
    let names: Vec<&str> = schema.iter().map(|d| d.name.as_str()).collect();
    let reply = llm
        .chat(DECOMPOSE, &[("dimensions", &names.join(", ")), ("question", question)])
        .map_err(RetrievalError::Decomposition)?;
    let mut out = Vec::new();
    for (dimension, content) in parse_decomposition(&reply) {
        let Some(dimension) = normalize_dimension_name(&dimension) else { continue };
        if !names.contains(&dimension.as_str()) {
            tracing::warn!(%dimension, "decomposition names an unknown dimension; dropped");
            continue;
        }
        if let Some(content) = normalize_label(&content) {
            out.push(QueryComponent { dimension, content });
        }
    }
    if out.is_empty() {
        return Err(RetrievalError::NoComponents);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct JsonComponent {
    #[serde(alias = "query_dimension")]
    dimension: String,
    #[serde(alias = "query_content")]
    content: String,
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let at = line.find(key)?;
    let rest = line[at + key.len()..].trim_start();
    let rest = rest.strip_prefix(':')?.trim_start();
    let value = match rest.chars().next()? {
        q @ ('\'' | '"') => {
            let body = &rest[1..];
            // The closing quote is the last one before the next field separator,
            // so apostrophes inside the content survive.
            let limit = body.find("; query_").or_else(|| body.find(";query_")).unwrap_or(body.len());
            let close = body[..limit].rfind(q).unwrap_or(limit);
            &body[..close]
        }
        _ => rest.split(';').next().unwrap_or(""),
    };
    Some(value.trim())
}

/// Raw `(dimension, content)` pairs in reply order.
pub fn parse_decomposition(reply: &str) -> Vec<(String, String)> {
    if let (Some(start), Some(end)) = (reply.find('['), reply.rfind(']')) {
        if start < end {
            if let Ok(items) = serde_json::from_str::<Vec<JsonComponent>>(&reply[start..=end]) {
                return items.into_iter().map(|c| (c.dimension, c.content)).collect();
            }
        }
    }
    reply
        .lines()
        .filter_map(|line| {
            let dimension = field(line, "query_dimension")?;
            let content = field(line, "query_content")?;
            Some((dimension.to_string(), content.to_string()))
        })
        .collect()
}

fn token_key(text: &str) -> Vec<Label> {
    text.split_whitespace().filter_map(normalize_label).collect()
}

/// Deterministic offline decomposition against the index vocabulary.
///
/// Query tokens are normalized one by one; n-grams of up to [`MAX_NGRAM`]
/// tokens are matched longest first against every label, each token being
/// consumed at most once. A matched n-gram yields one component per
/// dimension carrying it. Output is ordered by query position, then schema
/// order.
pub fn fallback_decompose(question: &str, index: &HypercubeIndex) -> Vec<QueryComponent> {
    let mut vocabulary: HashMap<Vec<Label>, Vec<(usize, &Label)>> = HashMap::new();
    for (pos, dim) in index.dimensions().iter().enumerate() {
        for (label, _) in index.vocabulary(&dim.name).expect("schema dimension") {
            let key = token_key(label.as_str());
            if key.is_empty() || key.len() > MAX_NGRAM {
                continue;
            }
            let entry = vocabulary.entry(key).or_default();
            // Labels iterate in order, so the first label per dimension wins.
            if !entry.iter().any(|(p, _)| *p == pos) {
                entry.push((pos, label));
            }
        }
    }

    let tokens = token_key(question);
    let mut consumed = vec![false; tokens.len()];
    let mut found: Vec<(usize, usize, &Label)> = Vec::new();
    for n in (1..=MAX_NGRAM.min(tokens.len())).rev() {
        for start in 0..=tokens.len() - n {
            if consumed[start..start + n].iter().any(|&c| c) {
                continue;
            }
            if let Some(hits) = vocabulary.get(&tokens[start..start + n]) {
                consumed[start..start + n].iter_mut().for_each(|c| *c = true);
                found.extend(hits.iter().map(|&(pos, label)| (start, pos, label)));
            }
        }
    }
    found.sort_by_key(|&(start, pos, _)| (start, pos));
    found
        .into_iter()
        .map(|(_, pos, label)| QueryComponent {
            dimension: index.dimensions()[pos].name.clone(),
            content: label.clone(),
        })
        .collect()
}

/// Where query components come from.
pub enum Decomposer<'a> {
    /// Chat-backend decomposition.
    Llm(&'a LlmClient),
    /// Label-vocabulary n-gram matching; needs no backend.
    Fallback,
    /// Components supplied per question text.
    Fixed(HashMap<String, Vec<QueryComponent>>),
}

impl Decomposer<'_> {
    pub fn decompose(&self, question: &str, index: &HypercubeIndex) -> Result<Vec<QueryComponent>, RetrievalError> {
        let out = match self {
            Decomposer::Llm(llm) => return decompose_query(question, index.dimensions(), llm),
            Decomposer::Fallback => fallback_decompose(question, index),
            Decomposer::Fixed(map) => map.get(question.trim()).cloned().unwrap_or_default(),
        };
        if out.is_empty() {
            return Err(RetrievalError::NoComponents);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::tests::{case_schema, label};
    use crate::cube::DocumentRecord;
    use crate::llm::{ClientSettings, NoChat, PromptSet, RetryPolicy, ScriptedChat};
    use std::sync::Arc;

    const QUESTION: &str = "How much rainfall did Melbourne Beach, Florida receive from Tropical Storm Fay?";

    fn comp(d: &str, c: &str) -> QueryComponent {
        QueryComponent::new(d, c).unwrap()
    }

    fn client(script: ScriptedChat) -> LlmClient {
        let settings = ClientSettings { retry: RetryPolicy::none(), ..ClientSettings::default() };
        LlmClient::new(Arc::new(script), PromptSet::default(), settings)
    }

    fn decompose_prompt() -> String {
        PromptSet::default()
            .get(DECOMPOSE)
            .unwrap()
            .render(&[("dimensions", "location, event, theme"), ("question", QUESTION)])
            .unwrap()
    }

    #[test]
    fn numbered_reply_is_parsed() {
        let reply = "1. query_dimension: 'location'; query_content: 'Melbourne Beach';\n\
                     2. query_dimension: 'event'; query_content: 'Tropical Storm Fay';\n\
                     3. query_dimension: 'theme'; query_content: 'rainfall'";
        let script = ScriptedChat::new().with_reply("scripted", &decompose_prompt(), reply);
        let got = decompose_query(QUESTION, &case_schema(), &client(script)).unwrap();
        assert_eq!(
            got,
            [comp("location", "melbourne beach"), comp("event", "tropical storm fay"), comp("theme", "rainfall")]
        );
    }

    #[test]
    fn json_reply_and_unknown_dimensions() {
        let reply = r#"[{"dimension": "Theme", "content": "Rain!"}, {"dimension": "planet", "content": "mars"},
                        {"query_dimension": "event", "query_content": "Fay's landfall"}]"#;
        let script = ScriptedChat::new().with_reply("scripted", &decompose_prompt(), reply);
        let got = decompose_query(QUESTION, &case_schema(), &client(script)).unwrap();
        assert_eq!(got, [comp("theme", "rain"), comp("event", "fay's landfall")]);
    }

    #[test]
    fn apostrophes_inside_quotes_survive() {
        let parsed = parse_decomposition("1. query_dimension: 'event'; query_content: 'Fay's landfall';");
        assert_eq!(parsed, [("event".to_string(), "Fay's landfall".to_string())]);
    }

    #[test]
    fn empty_reply_is_an_error() {
        let script = ScriptedChat::new().with_reply("scripted", &decompose_prompt(), "[]");
        let err = decompose_query(QUESTION, &case_schema(), &client(script)).unwrap_err();
        assert!(matches!(err, RetrievalError::NoComponents));
    }

    #[test]
    fn backend_failure_points_to_fallback() {
        let settings = ClientSettings { retry: RetryPolicy::none(), ..ClientSettings::default() };
        let llm = LlmClient::new(Arc::new(NoChat), PromptSet::default(), settings);
        let err = decompose_query(QUESTION, &case_schema(), &llm).unwrap_err();
        assert!(err.to_string().contains("fallback"), "{err}");
    }

    fn fixture() -> HypercubeIndex {
        let mut index = HypercubeIndex::new(case_schema()).unwrap();
        index
            .add_document(
                DocumentRecord::new("565", "")
                    .with_label("location", label("melbourne beach"), 1)
                    .with_label("location", label("florida"), 1)
                    .with_label("event", label("tropical storm fay"), 1)
                    .with_label("theme", label("rain"), 5),
            )
            .unwrap();
        index.add_document(DocumentRecord::new("1", "").with_label("theme", label("storm"), 1)).unwrap();
        index
    }

    #[test]
    fn decomposer_variants() {
        let index = fixture();
        let fallback = Decomposer::Fallback.decompose(QUESTION, &index).unwrap();
        assert_eq!(fallback, fallback_decompose(QUESTION, &index));
        let fixed = Decomposer::Fixed(HashMap::from([(QUESTION.to_string(), vec![comp("theme", "rain")])]));
        assert_eq!(fixed.decompose(&format!(" {QUESTION} "), &index).unwrap(), [comp("theme", "rain")]);
        assert!(matches!(fixed.decompose("other", &index), Err(RetrievalError::NoComponents)));
        assert!(matches!(Decomposer::Fallback.decompose("volcano", &index), Err(RetrievalError::NoComponents)));
    }

    /// Every label whose tokens appear as a contiguous run of the query.
    fn contained_labels(question: &str, index: &HypercubeIndex) -> Vec<(String, Label)> {
        let q = token_key(question);
        let mut out = Vec::new();
        for dim in index.dimensions() {
            for (l, _) in index.vocabulary(&dim.name).unwrap() {
                let k = token_key(l.as_str());
                if q.windows(k.len()).any(|w| w == k.as_slice()) {
                    out.push((dim.name.clone(), l.clone()));
                }
            }
        }
        out
    }

    #[test]
    fn case_study_fallback() {
        let index = fixture();
        let got = fallback_decompose(QUESTION, &index);
        assert_eq!(
            got,
            [comp("location", "melbourne beach"), comp("location", "florida"), comp("event", "tropical storm fay")]
        );
        // "storm" is contained in the query but consumed by the longer event label.
        let scan = contained_labels(QUESTION, &index);
        assert!(scan.contains(&("theme".into(), label("storm"))));
        for c in &got {
            assert!(scan.contains(&(c.dimension.clone(), c.content.clone())));
        }
    }

    #[test]
    fn fallback_edge_cases() {
        let index = fixture();
        assert!(fallback_decompose("nothing shared here", &index).is_empty());
        assert_eq!(fallback_decompose("Tropical Storm Fay", &index), [comp("event", "tropical storm fay")]);
        assert_eq!(fallback_decompose("storm", &index), [comp("theme", "storm")]);
        assert!(fallback_decompose("", &index).is_empty());
    }
}
