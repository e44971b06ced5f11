//! Inscription-type inference and interpretation generation.
//!
//! Two generation modes are available. [`generate_interpretation_vlm`]
//! makes one call to a vision-language model with the image, the
//! predicted components and the rendered evidence.
//! [`generate_interpretation_multiagent`] splits the work between a
//! retriever agent that plans graph queries and a reasoner agent that
//! writes the interpretation from the resulting bundle.

mod backend;
mod mock;
mod parse;
mod prompt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use backend::{
    approx_tokens, backend_from_env, AgentRole, BackendError, ChatBackend, ChatMessage, ChatRequest,
    ChatResponse, HttpChatBackend, Role, TokenUsage, CHAT_KEY_ENV, CHAT_MODEL_ENV, CHAT_URL_ENV,
    REASONER_URL_ENV, RETRIEVER_URL_ENV,
};
pub use mock::{CassetteEntry, MockOracleBackend, RecordingBackend, ReplayBackend, ScriptedBackend};
pub use parse::{parse_model_response, parse_plan_lines, round2, Expected, ParseError, Parsed, PlanLine};
pub use prompt::{template, Language, PromptTemplate, RenderedPrompt, TemplateError, TemplateName};

use crate::classifier::RankedPrediction;
use crate::embedding::EmbeddingProvider;
use crate::graph::GraphTools;
use crate::ingest::InscriptionType;
use crate::retrieval::{
    default_plan, retrieve_with_plan, EvidenceBundle, ExternalTool, PlannedCall, RetrievalConfig, RetrievalError,
    SemanticCache, ToolCall,
};

/// Rendered in place of the evidence list when a bundle has no items.
pub const NO_EVIDENCE_MARKER: &str = "(no retrieved evidence)";

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("{agent} backend unavailable: {source}")]
    BackendUnavailable {
        agent: AgentRole,
        #[source]
        source: BackendError,
    },
    #[error("{agent} reply unparseable: {error}")]
    UnparseableResponse {
        agent: AgentRole,
        error: ParseError,
        raw: String,
    },
    #[error("backend {backend} cannot take image input")]
    ImageRequiredButUnsupported { backend: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

impl std::fmt::Display for AgentRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Result<T, E = InferenceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vlm,
    MultiAgent,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "vlm" => Ok(Mode::Vlm),
            "multi_agent" | "multiagent" => Ok(Mode::MultiAgent),
            other => Err(format!("unknown mode `{other}` (expected vlm or multi_agent)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Vlm => "vlm",
            Mode::MultiAgent => "multi_agent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationResult {
    pub character_ref: String,
    pub inscription_type: Option<InscriptionType>,
    pub reasoning_trace: String,
    pub interpretation: String,
    /// Ranks of the evidence items that were rendered into the prompt.
    pub evidence_used: Vec<usize>,
    /// External graph tool calls behind the evidence, in issue order.
    pub evidence_trace: Vec<ToolCall>,
    /// Planned graph calls answered by the semantic cache.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cached_calls: Vec<ToolCall>,
    pub mode: Mode,
    pub token_usage: TokenUsage,
    /// Usage per agent; the parts sum to `token_usage`.
    pub agent_usage: BTreeMap<AgentRole, TokenUsage>,
    pub backend_names: Vec<String>,
    pub language: Language,
    pub template_ids: Vec<String>,
    /// Corrective retries spent on type parsing.
    pub retries: u32,
    /// Set when the retriever's plan was rejected and the fixed cascade ran.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub planner_fallback: bool,
}

impl InterpretationResult {
    /// Folds a type judgement into this result.
    pub fn attach_relationship(&mut self, rel: &Relationship) {
        self.inscription_type = Some(rel.inscription_type);
        self.reasoning_trace = rel.reasoning_trace.clone();
        self.token_usage += rel.token_usage;
        *self.agent_usage.entry(AgentRole::Single).or_default() += rel.token_usage;
        self.retries += rel.retries;
        for id in &rel.template_ids {
            if !self.template_ids.contains(id) {
                self.template_ids.push(id.clone());
            }
        }
        if !self.backend_names.contains(&rel.backend_name) {
            self.backend_names.push(rel.backend_name.clone());
        }
    }
}

/// Outcome of [`infer_relationship`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relationship {
    pub inscription_type: InscriptionType,
    pub reasoning_trace: String,
    pub token_usage: TokenUsage,
    pub retries: u32,
    pub template_ids: Vec<String>,
    pub backend_name: String,
}

fn render_components(predicted: &RankedPrediction) -> String {
    if predicted.is_empty() {
        return "(none)".into();
    }
    predicted
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{}. {} ({:.4})", i + 1, e.label, e.distance))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One line per bundle item: `[rank] kind: subject: content`.
pub fn render_evidence(bundle: &EvidenceBundle) -> String {
    if bundle.items.is_empty() {
        return NO_EVIDENCE_MARKER.into();
    }
    bundle
        .items
        .iter()
        .map(|it| {
            let kind = serde_json::to_value(it.kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let content = if it.empty_explanation {
                "(no explanation recorded)".to_string()
            } else {
                it.content.replace('\n', " ")
            };
            format!("[{}] {kind}: {}: {content}", it.rank, it.subject)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn image_note(lang: Language, attached: bool) -> &'static str {
    match (lang, attached) {
        (Language::En, true) => "An image of the character is attached.",
        (Language::En, false) => "No image is attached.",
        (Language::Zh, true) => "已附上该字的图像。",
        (Language::Zh, false) => "未附图像。",
    }
}

fn build_request(rendered: &RenderedPrompt, image: Option<&[u8]>) -> ChatRequest {
    let mut messages = Vec::new();
    if !rendered.system.is_empty() {
        messages.push(ChatMessage::system(&rendered.system));
    }
    let mut user = ChatMessage::user(&rendered.user);
    if let Some(img) = image {
        user = user.with_image(img);
    }
    messages.push(user);
    ChatRequest::new(messages)
}

fn call(backend: &dyn ChatBackend, agent: AgentRole, req: &ChatRequest) -> Result<ChatResponse> {
    backend
        .complete(req)
        .map_err(|source| InferenceError::BackendUnavailable { agent, source })
}

fn check_image(backend: &dyn ChatBackend, image: Option<&[u8]>) -> Result<()> {
    if image.is_some() && !backend.supports_images() {
        return Err(InferenceError::ImageRequiredButUnsupported {
            backend: backend.name().to_string(),
        });
    }
    Ok(())
}

fn standard_slots(
    character_ref: &str,
    predicted: &RankedPrediction,
    evidence: Option<&EvidenceBundle>,
    lang: Language,
    image: bool,
) -> Vec<(&'static str, String)> {
    let mut slots = vec![
        ("character_ref", character_ref.to_string()),
        ("image_note", image_note(lang, image).to_string()),
        ("components", render_components(predicted)),
    ];
    if let Some(b) = evidence {
        slots.push(("evidence", render_evidence(b)));
    }
    slots
}

/// Asks for the inscription type and a reasoning trace. A reply that does
/// not follow the grammar gets one corrective follow-up; a second failure
/// is an error.
pub fn infer_relationship(
    backend: &dyn ChatBackend,
    image: Option<&[u8]>,
    predicted: &RankedPrediction,
    evidence: &EvidenceBundle,
    lang: Language,
) -> Result<Relationship> {
    check_image(backend, image)?;
    let tpl = template(TemplateName::TypeInference, lang);
    let rendered = tpl.render(&standard_slots(
        &evidence.character_ref,
        predicted,
        Some(evidence),
        lang,
        image.is_some(),
    ))?;
    let mut req = build_request(&rendered, image);
    let first = call(backend, AgentRole::Single, &req)?;
    let mut usage = first.usage;
    let mut template_ids = vec![rendered.template_id.clone()];
    let err = match parse_model_response(&first.content, Expected::TypedClassification) {
        Ok(Parsed::TypedClassification { inscription_type, reason }) => {
            return Ok(Relationship {
                inscription_type,
                reasoning_trace: reason,
                token_usage: usage,
                retries: 0,
                template_ids,
                backend_name: backend.name().to_string(),
            })
        }
        Ok(_) => unreachable!("typed parse yields typed fields"),
        Err(e) => e,
    };
    let retry = template(TemplateName::TypeRetry, lang).render(&[("error", err.reason.clone())])?;
    template_ids.push(retry.template_id.clone());
    req.messages.push(ChatMessage::assistant(&first.content));
    req.messages.push(ChatMessage::user(&retry.user));
    let second = call(backend, AgentRole::Single, &req)?;
    usage += second.usage;
    match parse_model_response(&second.content, Expected::TypedClassification) {
        Ok(Parsed::TypedClassification { inscription_type, reason }) => Ok(Relationship {
            inscription_type,
            reasoning_trace: reason,
            token_usage: usage,
            retries: 1,
            template_ids,
            backend_name: backend.name().to_string(),
        }),
        Ok(_) => unreachable!("typed parse yields typed fields"),
        Err(error) => Err(InferenceError::UnparseableResponse {
            agent: AgentRole::Single,
            error,
            raw: second.content,
        }),
    }
}

fn parse_interpretation(agent: AgentRole, raw: String) -> Result<String> {
    match parse_model_response(&raw, Expected::Interpretation) {
        Ok(Parsed::Interpretation { text }) => Ok(text),
        Ok(_) => unreachable!("interpretation parse yields text"),
        Err(error) => Err(InferenceError::UnparseableResponse { agent, error, raw }),
    }
}

/// Single-call interpretation from image, predictions and evidence.
pub fn generate_interpretation_vlm(
    backend: &dyn ChatBackend,
    image: &[u8],
    predicted: &RankedPrediction,
    evidence: &EvidenceBundle,
    lang: Language,
) -> Result<InterpretationResult> {
    if !backend.supports_images() {
        return Err(InferenceError::ImageRequiredButUnsupported {
            backend: backend.name().to_string(),
        });
    }
    let tpl = template(TemplateName::InterpretationVlm, lang);
    let rendered = tpl.render(&standard_slots(&evidence.character_ref, predicted, Some(evidence), lang, true))?;
    let req = build_request(&rendered, Some(image));
    let resp = call(backend, AgentRole::Single, &req)?;
    let interpretation = parse_interpretation(AgentRole::Single, resp.content)?;
    Ok(InterpretationResult {
        character_ref: evidence.character_ref.clone(),
        inscription_type: None,
        reasoning_trace: String::new(),
        interpretation,
        evidence_used: evidence.items.iter().map(|i| i.rank).collect(),
        evidence_trace: evidence.trace.clone(),
        cached_calls: evidence.cached_calls.clone(),
        mode: Mode::Vlm,
        token_usage: resp.usage,
        agent_usage: BTreeMap::from([(AgentRole::Single, resp.usage)]),
        backend_names: vec![backend.name().to_string()],
        language: lang,
        template_ids: vec![rendered.template_id],
        retries: 0,
        planner_fallback: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[derive(Default)]
pub struct MultiAgentOptions {
    pub lang: Language,
    /// Send the character image to the retriever agent as well.
    pub retriever_sees_image: bool,
}


/// Turns a planner reply into calls. `None` when any CALL line is malformed
/// or names a tool other than the two graph tools, or when no call is made.
fn validate_plan(raw: &str, max_calls: usize) -> Option<Vec<PlannedCall>> {
    let lines = parse_plan_lines(raw).ok()?;
    let mut plan = Vec::new();
    for l in lines {
        let tool = ExternalTool::parse(&l.tool)?;
        let call = PlannedCall {
            tool,
            argument: l.argument,
        };
        if !plan.contains(&call) {
            plan.push(call);
        }
    }
    if plan.is_empty() {
        return None;
    }
    plan.truncate(max_calls);
    Some(plan)
}

/// Output of the retriever agent.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalPlanOutcome {
    pub bundle: EvidenceBundle,
    pub usage: TokenUsage,
    pub fallback: bool,
    pub template_id: String,
    pub backend_name: String,
}

/// Retriever agent: asks the backend for a tool plan, executes it through
/// the cascade (falling back to the fixed plan when the reply is unusable)
/// and returns the bundle.
#[allow(clippy::too_many_arguments)]
pub fn plan_retrieval<G: GraphTools + ?Sized>(
    retriever: &dyn ChatBackend,
    image: Option<&[u8]>,
    graph: &G,
    character_ref: &str,
    predicted: &RankedPrediction,
    cache: &SemanticCache,
    provider: &dyn EmbeddingProvider,
    config: &RetrievalConfig,
    opts: MultiAgentOptions,
) -> Result<RetrievalPlanOutcome> {
    let image = if opts.retriever_sees_image { image } else { None };
    check_image(retriever, image)?;
    let max_calls = 2 * config.top_m;
    let tpl = template(TemplateName::RetrieverPlan, opts.lang);
    let mut slots = standard_slots(character_ref, predicted, None, opts.lang, image.is_some());
    slots.push(("max_calls", max_calls.to_string()));
    let rendered = tpl.render(&slots)?;
    let resp = call(retriever, AgentRole::Retriever, &build_request(&rendered, image))?;
    let (plan, fallback) = match validate_plan(&resp.content, max_calls) {
        Some(p) => (p, false),
        None => (default_plan(predicted, config), true),
    };
    let bundle = retrieve_with_plan(graph, character_ref, predicted, &plan, cache, provider, config)?;
    Ok(RetrievalPlanOutcome {
        bundle,
        usage: resp.usage,
        fallback,
        template_id: rendered.template_id,
        backend_name: retriever.name().to_string(),
    })
}

/// Reasoner agent: writes the interpretation from a bundle. The image is
/// forwarded only when the backend accepts images.
pub fn reason_interpretation(
    reasoner: &dyn ChatBackend,
    image: Option<&[u8]>,
    predicted: &RankedPrediction,
    bundle: &EvidenceBundle,
    lang: Language,
) -> Result<(String, TokenUsage, String)> {
    let image = image.filter(|_| reasoner.supports_images());
    let tpl = template(TemplateName::Reasoner, lang);
    let rendered = tpl.render(&standard_slots(&bundle.character_ref, predicted, Some(bundle), lang, image.is_some()))?;
    let resp = call(reasoner, AgentRole::Reasoner, &build_request(&rendered, image))?;
    let text = parse_interpretation(AgentRole::Reasoner, resp.content)?;
    Ok((text, resp.usage, rendered.template_id))
}

/// Retriever then reasoner. Returns the result and the bundle the
/// retriever assembled.
#[allow(clippy::too_many_arguments)]
pub fn generate_interpretation_multiagent<G: GraphTools + ?Sized>(
    retriever: &dyn ChatBackend,
    reasoner: &dyn ChatBackend,
    image: Option<&[u8]>,
    graph: &G,
    character_ref: &str,
    predicted: &RankedPrediction,
    cache: &SemanticCache,
    provider: &dyn EmbeddingProvider,
    config: &RetrievalConfig,
    opts: MultiAgentOptions,
) -> Result<(InterpretationResult, EvidenceBundle)> {
    let plan = plan_retrieval(
        retriever,
        image,
        graph,
        character_ref,
        predicted,
        cache,
        provider,
        config,
        opts,
    )?;
    let (interpretation, reason_usage, reason_tpl) =
        reason_interpretation(reasoner, image, predicted, &plan.bundle, opts.lang)?;
    let result = InterpretationResult {
        character_ref: character_ref.to_string(),
        inscription_type: None,
        reasoning_trace: String::new(),
        interpretation,
        evidence_used: plan.bundle.items.iter().map(|i| i.rank).collect(),
        evidence_trace: plan.bundle.trace.clone(),
        cached_calls: plan.bundle.cached_calls.clone(),
        mode: Mode::MultiAgent,
        token_usage: plan.usage + reason_usage,
        agent_usage: BTreeMap::from([(AgentRole::Retriever, plan.usage), (AgentRole::Reasoner, reason_usage)]),
        backend_names: vec![plan.backend_name.clone(), reasoner.name().to_string()],
        language: opts.lang,
        template_ids: vec![plan.template_id.clone(), reason_tpl],
        retries: 0,
        planner_fallback: plan.fallback,
    };
    Ok((result, plan.bundle))
}
