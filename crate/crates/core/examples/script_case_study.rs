//! Regenerates `fixtures/case_study/scripted.jsonl`: canned decomposition,
//! answer and judge replies for the case-study questions.
//!
//! Decompositions come from `components.json`; answer prompts are rendered
//! over the documents the fixture index actually retrieves, so this must be
//! rerun whenever the corpus, gazetteer or prompts change.
//!
//! ```text
//! cargo run -p hypercube-rag --example script_case_study
//! ```

use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use hypercube_rag::answer::render_documents;
use hypercube_rag::builder::{index_corpus, IndexOptions};
use hypercube_rag::corpus::load_corpus;
use hypercube_rag::cube::load_schema;
use hypercube_rag::eval::load_qa;
use hypercube_rag::extraction::{Gazetteer, GazetteerExtractor};
use hypercube_rag::llm::prompts::{ANSWER, DECOMPOSE, JUDGE};
use hypercube_rag::llm::{PromptSet, ScriptLine, ToyEmbedder};
use hypercube_rag::{rank, Execution, QueryComponent, RetrievalConfig, Retriever};

pub const TOP_K: usize = 3;
pub const TAU: f64 = 0.5;

/// Scripted generator output per question; equal to the gold answer unless
/// listed here.
const PREDICTED: [(&str, &str); 1] =
    [("How did Tropical Storm Fay contribute to beach erosion in Florida?", "Fay leveled the dunes")];

/// Scripted judge verdicts (correctness, completeness) for predictions that
/// differ from the gold answer; exact matches are judged (1, 1).
const VERDICTS: [(&str, u8, u8); 1] = [("How did Tropical Storm Fay contribute to beach erosion in Florida?", 1, 0)];

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("case_study")
}

fn numbered(components: &[QueryComponent]) -> String {
    components
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. query_dimension: '{}'; query_content: '{}';", i + 1, c.dimension, c.content))
        .collect::<Vec<_>>()
        .join("\n")
}

fn line(prompt: String, reply: String) -> ScriptLine {
    ScriptLine { prompt_hash: None, prompt: Some(prompt), model: None, reply }
}

/// The script file's contents, one JSON object per line.
pub fn render_script(dir: &Path) -> Result<String, Box<dyn Error>> {
    let corpus = load_corpus(&dir.join("corpus.jsonl"))?;
    let schema = load_schema(&dir.join("schema.json"))?;
    let extractor = GazetteerExtractor::new(Gazetteer::load(&dir.join("gazetteer.json"))?);
    let opts = IndexOptions { exec: Execution::Sequential, ..IndexOptions::default() };
    let (index, _) = index_corpus(&corpus, &schema, &extractor, opts)?;
    let components: BTreeMap<String, Vec<QueryComponent>> =
        serde_json::from_str(&fs::read_to_string(dir.join("components.json"))?)?;
    let qa = load_qa(&dir.join("qa.jsonl"))?;

    let prompts = PromptSet::default();
    let embedder = ToyEmbedder::default();
    let retriever = Retriever::new(&index, &embedder);
    let config = RetrievalConfig { top_k: TOP_K, tau: TAU, ..RetrievalConfig::default() };
    let dimensions = index.dimension_names().join(", ");

    let mut lines = Vec::new();
    for record in &qa {
        let q = record.question.as_str();
        let comps = components.get(q).ok_or_else(|| format!("components.json has no entry for {q:?}"))?;
        let decompose = prompts.get(DECOMPOSE)?.render(&[("dimensions", &dimensions), ("question", q)])?;
        lines.push(line(decompose, numbered(comps)));

        let r = retriever.retrieve(comps, &config)?;
        let ranked = rank(&r.matches, r.n_components, TOP_K);
        let docs: Vec<_> = ranked.entries.iter().map(|e| index.doc(&e.doc_id).expect("ranked doc")).collect();
        let documents = render_documents(&docs);
        let answer = prompts.get(ANSWER)?.render(&[("question", q), ("documents", &documents)])?;
        let predicted =
            PREDICTED.iter().find(|(pq, _)| *pq == q).map_or(record.answer.as_str(), |(_, a)| *a).to_string();
        lines.push(line(answer, predicted.clone()));

        let (correctness, completeness) = VERDICTS.iter().find(|(vq, ..)| *vq == q).map_or((1, 1), |v| (v.1, v.2));
        let judge = prompts.get(JUDGE)?.render(&[
            ("question", q),
            ("gold_answer", &record.answer),
            ("predicted_answer", &predicted),
        ])?;
        let verdict = serde_json::json!({
            "correctness": correctness,
            "completeness": completeness,
            "explanation": "scripted verdict",
        });
        lines.push(line(judge, verdict.to_string()));
    }
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(&l)?);
        out.push('\n');
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    let dir = fixture_dir();
    let path = dir.join("scripted.jsonl");
    fs::write(&path, render_script(&dir)?)?;
    println!("wrote {}", path.display());
    Ok(())
}
