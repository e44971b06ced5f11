//! Chat backend contract, wire format and HTTP client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::InFlightLimit;
use crate::io::sha256_hex;

pub const CHAT_URL_ENV: &str = "OBS_CHAT_URL";
pub const CHAT_KEY_ENV: &str = "OBS_CHAT_KEY";
pub const CHAT_MODEL_ENV: &str = "OBS_CHAT_MODEL";
pub const RETRIEVER_URL_ENV: &str = "OBS_RETRIEVER_URL";
pub const REASONER_URL_ENV: &str = "OBS_REASONER_URL";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned a malformed response: {0}")]
    BadResponse(String),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
            image_b64: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
            image_b64: None,
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
            image_b64: None,
        }
    }

    pub fn with_image(mut self, image: &[u8]) -> Self {
        use base64::Engine;
        self.image_b64 = Some(base64::engine::general_purpose::STANDARD.encode(image));
        self
    }
}

/// Request body of the chat wire protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model: String::new(),
            temperature: 0.0,
            messages,
        }
    }

    pub fn has_image(&self) -> bool {
        self.messages.iter().any(|m| m.image_b64.is_some())
    }

    /// SHA-256 over the canonical JSON of the messages and temperature. The
    /// model name is excluded so fixtures survive backend renames.
    pub fn prompt_hash(&self) -> String {
        let canonical = serde_json::json!({
            "temperature": self.temperature,
            "messages": self.messages,
        });
        sha256_hex(canonical.to_string().as_bytes())
    }

    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn system_text(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default)]
    pub usage: TokenUsage,
}

/// A chat or vision-language model.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn supports_images(&self) -> bool;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn supports_images(&self) -> bool {
        (**self).supports_images()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn supports_images(&self) -> bool {
        (**self).supports_images()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Rough token count: one per CJK character, one per other word.
pub fn approx_tokens(text: &str) -> u64 {
    let mut n = 0u64;
    let mut in_word = false;
    for c in text.chars() {
        if is_cjk(c) {
            n += 1;
            in_word = false;
        } else if c.is_whitespace() {
            in_word = false;
        } else if !in_word {
            n += 1;
            in_word = true;
        }
    }
    n
}

pub(crate) fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F)
}

/// Client for the JSON chat endpoint described in the README.
pub struct HttpChatBackend {
    url: String,
    key: Option<String>,
    model: String,
    supports_images: bool,
    name: String,
    agent: ureq::Agent,
    limit: InFlightLimit,
}

impl HttpChatBackend {
    pub fn new(url: &str, key: Option<String>, model: &str, supports_images: bool, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        HttpChatBackend {
            url: url.to_string(),
            key,
            model: model.to_string(),
            supports_images,
            name: format!("http:{model}@{url}"),
            agent,
            limit: InFlightLimit::new(max_in_flight),
        }
    }
}

impl ChatBackend for HttpChatBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_images(&self) -> bool {
        self.supports_images
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut body = request.clone();
        if body.model.is_empty() {
            body.model = self.model.clone();
        }
        let _permit = self.limit.acquire();
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        resp.body_mut()
            .read_json::<ChatResponse>()
            .map_err(|e| BackendError::BadResponse(e.to_string()))
    }
}

/// Which agent a backend serves; selects the per-agent URL override.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Single,
    Retriever,
    Reasoner,
    Judge,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Single => "single",
            AgentRole::Retriever => "retriever",
            AgentRole::Reasoner => "reasoner",
            AgentRole::Judge => "judge",
        }
    }
}

/// Builds an HTTP backend from the environment (`OBS_CHAT_URL` plus the
/// per-agent overrides). Keys are only ever read from the environment.
pub fn backend_from_env(role: AgentRole, max_in_flight: usize) -> Result<HttpChatBackend, BackendError> {
    let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
    let url = match role {
        AgentRole::Retriever => var(RETRIEVER_URL_ENV),
        AgentRole::Reasoner => var(REASONER_URL_ENV),
        _ => None,
    }
    .or_else(|| var(CHAT_URL_ENV))
    .ok_or_else(|| BackendError::NotConfigured(format!("set {CHAT_URL_ENV} or pass --mock")))?;
    let model = var(CHAT_MODEL_ENV).unwrap_or_else(|| "default".into());
    Ok(HttpChatBackend::new(&url, var(CHAT_KEY_ENV), &model, true, max_in_flight))
}
