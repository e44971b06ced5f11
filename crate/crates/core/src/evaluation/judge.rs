//! Rubric-prompted LLM judge.

use serde::{Deserialize, Serialize};

use crate::inference::{
    parse_model_response, template, AgentRole, ChatBackend, ChatMessage, ChatRequest, Expected, InferenceError,
    Language, Parsed, TemplateName, TokenUsage,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    /// In [0, 1], rounded to two decimals.
    pub score: f64,
    pub usage: TokenUsage,
    pub template_id: String,
}

/// The id of the shipped judge template.
pub fn judge_template_id() -> &'static str {
    template(TemplateName::Judge, Language::En).template_id()
}

/// Builds the judge request: rubric as system message, the two sentences
/// and the answer format as user message, temperature 0.
pub fn judge_request(candidate: &str, reference: &str) -> Result<ChatRequest, InferenceError> {
    let rendered = template(TemplateName::Judge, Language::En).render(&[
        ("reference", reference.replace('\n', " ")),
        ("candidate", candidate.replace('\n', " ")),
    ])?;
    let mut req = ChatRequest::new(vec![ChatMessage::system(rendered.system), ChatMessage::user(rendered.user)]);
    req.temperature = 0.0;
    Ok(req)
}

pub fn llm_judge(backend: &dyn ChatBackend, candidate: &str, reference: &str) -> Result<JudgeScore, InferenceError> {
    let req = judge_request(candidate, reference)?;
    let resp = backend.complete(&req).map_err(|source| InferenceError::BackendUnavailable {
        agent: AgentRole::Judge,
        source,
    })?;
    match parse_model_response(&resp.content, Expected::JudgeScore) {
        Ok(Parsed::JudgeScore { score }) => Ok(JudgeScore {
            score,
            usage: resp.usage,
            template_id: judge_template_id().to_string(),
        }),
        Ok(_) => unreachable!("score parse yields a score"),
        Err(error) => Err(InferenceError::UnparseableResponse {
            agent: AgentRole::Judge,
            error,
            raw: resp.content,
        }),
    }
}
