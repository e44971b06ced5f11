//! Layered run configuration: flags over environment over file over
//! defaults. Keys and tokens are read from the environment only.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProvider, HttpProvider, StubProvider, DEFAULT_DIM, EMBED_URL_ENV};
use crate::evaluation::Metric;
use crate::inference::{
    AgentRole, BackendError, ChatBackend, HttpChatBackend, Language, MockOracleBackend, Mode, CHAT_KEY_ENV,
    CHAT_MODEL_ENV, CHAT_URL_ENV, REASONER_URL_ENV, RETRIEVER_URL_ENV,
};
use crate::retrieval::RetrievalConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("config {path} contains secret-looking key `{key}`; set secrets through the environment")]
    SecretInFile { path: PathBuf, key: String },
    #[error("invalid value for {name}: {reason}")]
    Invalid { name: String, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Manifest of the characters to run (usually the test side).
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub mock: bool,
    pub chat_url: Option<String>,
    pub retriever_url: Option<String>,
    pub reasoner_url: Option<String>,
    pub chat_model: String,
    pub max_in_flight: usize,
    /// Whether remote chat backends accept image attachments.
    pub images: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mock: false,
            chat_url: None,
            retriever_url: None,
            reasoner_url: None,
            chat_model: "default".into(),
            max_in_flight: 4,
            images: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub url: Option<String>,
    pub dim: usize,
    pub max_in_flight: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            url: None,
            dim: DEFAULT_DIM,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub retrieval: RetrievalConfig,
    pub backend: BackendConfig,
    pub embedding: EmbeddingConfig,
    pub language: Language,
    pub mode: Mode,
    /// Components kept per character prediction.
    pub top_k: usize,
    pub workers: usize,
    pub retriever_sees_image: bool,
    pub metrics: BTreeSet<Metric>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PathsConfig::default(),
            retrieval: RetrievalConfig::default(),
            backend: BackendConfig::default(),
            embedding: EmbeddingConfig::default(),
            language: Language::Zh,
            mode: Mode::Vlm,
            top_k: 5,
            workers: 4,
            retriever_sees_image: false,
            metrics: [Metric::Rouge1, Metric::EmbeddingF1, Metric::Mover, Metric::TypeAccuracy]
                .into_iter()
                .collect(),
        }
    }
}

fn find_secret(value: &toml::Value, prefix: &str) -> Option<String> {
    let table = value.as_table()?;
    for (k, v) in table {
        let lower = k.to_ascii_lowercase();
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if ["key", "token", "secret", "password"].iter().any(|s| lower.contains(s)) {
            return Some(path);
        }
        if let Some(found) = find_secret(v, &path) {
            return Some(found);
        }
    }
    None
}

fn parse_env<T: std::str::FromStr>(name: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| ConfigError::Invalid {
        name: name.to_string(),
        reason: e.to_string(),
    })
}

impl PipelineConfig {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if let Some(key) = find_secret(&raw, "") {
            return Err(ConfigError::SecretInFile {
                path: path.to_path_buf(),
                key,
            });
        }
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(path, &text)
    }

    /// Applies `OBS_*` environment variables on top of the current values.
    pub fn apply_env<F: Fn(&str) -> Option<String>>(&mut self, env: F) -> Result<(), ConfigError> {
        let get = |k: &str| env(k).filter(|v| !v.trim().is_empty());
        if let Some(v) = get(CHAT_URL_ENV) {
            self.backend.chat_url = Some(v);
        }
        if let Some(v) = get(RETRIEVER_URL_ENV) {
            self.backend.retriever_url = Some(v);
        }
        if let Some(v) = get(REASONER_URL_ENV) {
            self.backend.reasoner_url = Some(v);
        }
        if let Some(v) = get(CHAT_MODEL_ENV) {
            self.backend.chat_model = v;
        }
        if let Some(v) = get(EMBED_URL_ENV) {
            self.embedding.url = Some(v);
        }
        if let Some(v) = get("OBS_LANG") {
            self.language = parse_env("OBS_LANG", &v)?;
        }
        if let Some(v) = get("OBS_MODE") {
            self.mode = parse_env("OBS_MODE", &v)?;
        }
        if let Some(v) = get("OBS_WORKERS") {
            self.workers = parse_env("OBS_WORKERS", &v)?;
        }
        if let Some(v) = get("OBS_EMBED_DIM") {
            self.embedding.dim = parse_env("OBS_EMBED_DIM", &v)?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then the process environment.
    /// Command-line flags are applied by the caller afterwards.
    pub fn resolve(file: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.retrieval.validate().map_err(|e| ConfigError::Invalid {
            name: "retrieval".into(),
            reason: e.to_string(),
        })?;
        let positive = [
            ("top_k", self.top_k),
            ("workers", self.workers),
            ("backend.max_in_flight", self.backend.max_in_flight),
            ("embedding.dim", self.embedding.dim),
            ("embedding.max_in_flight", self.embedding.max_in_flight),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid {
                    name: name.into(),
                    reason: "must be at least 1".into(),
                });
            }
        }
        Ok(())
    }

    /// Embedding provider for this configuration. Mock runs always use the
    /// local stub so they never touch the network.
    pub fn embedding_provider(&self) -> Arc<dyn EmbeddingProvider> {
        match (&self.embedding.url, self.backend.mock) {
            (Some(url), false) => Arc::new(HttpProvider::new(url, self.embedding.dim, self.embedding.max_in_flight)),
            _ => Arc::new(StubProvider::new(self.embedding.dim)),
        }
    }

    /// Chat backend serving `role`.
    pub fn chat_backend(&self, role: AgentRole) -> Result<Arc<dyn ChatBackend>, BackendError> {
        if self.backend.mock {
            return Ok(Arc::new(MockOracleBackend::new(role.as_str())));
        }
        let url = match role {
            AgentRole::Retriever => self.backend.retriever_url.as_ref(),
            AgentRole::Reasoner => self.backend.reasoner_url.as_ref(),
            _ => None,
        }
        .or(self.backend.chat_url.as_ref())
        .ok_or_else(|| BackendError::NotConfigured(format!("set {CHAT_URL_ENV} or pass --mock")))?;
        let key = std::env::var(CHAT_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(Arc::new(HttpChatBackend::new(
            url,
            key,
            &self.backend.chat_model,
            self.backend.images,
            self.backend.max_in_flight,
        )))
    }
}
