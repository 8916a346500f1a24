//! Answer generation grounded in ranked documents.

use serde::{Deserialize, Serialize};

use crate::cube::{DocId, DocumentRecord};
use crate::llm::prompts::ANSWER;
use crate::llm::{LlmClient, LlmError};

/// Returned instead of a generated answer when nothing was retrieved.
pub const NO_SUPPORT: &str = "[no supporting documents]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedAnswer {
    pub answer: String,
    /// False when retrieval came back empty and no model was called.
    pub supported: bool,
    /// Documents given to the model, in rank order.
    pub doc_ids: Vec<DocId>,
}

/// `[Doc <id>] <text>` per document, one per line.
pub fn render_documents(docs: &[&DocumentRecord]) -> String {
    docs.iter().map(|d| format!("[Doc {}] {}", d.doc_id, d.text)).collect::<Vec<_>>().join("\n")
}

pub fn answer_question(question: &str, docs: &[&DocumentRecord], llm: &LlmClient) -> Result<GroundedAnswer, LlmError> {
    if docs.is_empty() {
        return Ok(GroundedAnswer { answer: NO_SUPPORT.into(), supported: false, doc_ids: Vec::new() });
    }
    let reply = llm.chat(ANSWER, &[("question", question), ("documents", &render_documents(docs))])?;
    Ok(GroundedAnswer {
        answer: reply.trim().to_string(),
        supported: true,
        doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
    })
}
