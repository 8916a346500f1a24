use serde::{Deserialize, Serialize};

use crate::llm::prompts::JUDGE;
use crate::llm::{LlmClient, LlmError};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub correctness: u8,
    pub completeness: u8,
    #[serde(default)]
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JudgeOutcome {
    Judged(JudgeVerdict),
    /// No chat backend; nothing was scored.
    Skipped {
        reason: String,
    },
}

const REASK: &str = "\n\nYour previous reply could not be parsed. Reply with only the JSON object, \
with integer correctness and completeness (0 or 1) and a string explanation.";

pub fn parse_verdict(reply: &str) -> Option<JudgeVerdict> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    let verdict: JudgeVerdict = serde_json::from_str(reply.get(start..=end)?).ok()?;
    (verdict.correctness <= 1 && verdict.completeness <= 1).then_some(verdict)
}

/// Scores a predicted answer against the gold one. A malformed reply is
/// re-asked once with a stricter instruction; an unavailable backend yields
/// [`JudgeOutcome::Skipped`].
pub fn llm_judge(question: &str, gold: &str, predicted: &str, llm: &LlmClient) -> Result<JudgeOutcome, EvalError> {
    let template = llm.prompts().get(JUDGE).map_err(EvalError::Llm)?;
    let prompt = template
        .render(&[("question", question), ("gold_answer", gold), ("predicted_answer", predicted)])
        .map_err(EvalError::Llm)?;
    let model = llm.model_for(template);
    let first = match llm.complete(model, &prompt, template.temperature) {
        Ok(reply) => reply,
        Err(LlmError::Unavailable(reason)) => return Ok(JudgeOutcome::Skipped { reason }),
        Err(e) => return Err(EvalError::Llm(e)),
    };
    if let Some(v) = parse_verdict(&first) {
        return Ok(JudgeOutcome::Judged(v));
    }
    let second = llm.complete(model, &format!("{prompt}{REASK}"), template.temperature).map_err(EvalError::Llm)?;
    parse_verdict(&second).map(JudgeOutcome::Judged).ok_or(EvalError::JudgeMalformed { raw: second })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ClientSettings, NoChat, PromptSet, RetryPolicy, ScriptedChat};
    use std::sync::Arc;

    fn client(script: ScriptedChat) -> LlmClient {
        let settings = ClientSettings { retry: RetryPolicy::none(), ..ClientSettings::default() };
        LlmClient::new(Arc::new(script), PromptSet::default(), settings)
    }

    fn prompt() -> String {
        PromptSet::default()
            .get(JUDGE)
            .unwrap()
            .render(&[("question", "q"), ("gold_answer", "25.28 inches"), ("predicted_answer", "25 inches")])
            .unwrap()
    }

    const GOOD: &str = r#"{"correctness": 1, "completeness": 0, "explanation": "close"}"#;

    #[test]
    fn parsed_verbatim() {
        let llm = client(ScriptedChat::new().with_reply("scripted", &prompt(), GOOD));
        let out = llm_judge("q", "25.28 inches", "25 inches", &llm).unwrap();
        assert_eq!(
            out,
            JudgeOutcome::Judged(JudgeVerdict { correctness: 1, completeness: 0, explanation: "close".into() })
        );
    }

    #[test]
    fn reask_once() {
        let script = ScriptedChat::new().with_reply("scripted", &prompt(), "Looks right to me.").with_reply(
            "scripted",
            &format!("{}{REASK}", prompt()),
            GOOD,
        );
        let llm = client(script);
        assert!(matches!(llm_judge("q", "25.28 inches", "25 inches", &llm).unwrap(), JudgeOutcome::Judged(_)));
        assert_eq!(llm.backend_calls(), 2);

        let script = ScriptedChat::new().with_reply("scripted", &prompt(), "no").with_reply(
            "scripted",
            &format!("{}{REASK}", prompt()),
            r#"{"correctness": 7, "completeness": 1}"#,
        );
        assert!(matches!(
            llm_judge("q", "25.28 inches", "25 inches", &client(script)),
            Err(EvalError::JudgeMalformed { .. })
        ));
    }

    #[test]
    fn unavailable_is_skipped() {
        let settings = ClientSettings { retry: RetryPolicy::none(), ..ClientSettings::default() };
        let llm = LlmClient::new(Arc::new(NoChat), PromptSet::default(), settings);
        assert!(matches!(llm_judge("q", "a", "b", &llm).unwrap(), JudgeOutcome::Skipped { .. }));
    }
}
