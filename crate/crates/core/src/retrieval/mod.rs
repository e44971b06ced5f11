//! Cascading evidence retrieval over the knowledge graph.
//!
//! Stage one issues the two external tools (component explanation, then
//! characters-by-component) for each of the top predicted components, each
//! call routed through the [`SemanticCache`]. When the result stays below
//! `min_evidence` items, stage two performs variant and modern-form lookups
//! internally for the characters found so far. Everything is then
//! deduplicated, ordered by a fixed priority and truncated.

mod cache;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};

pub use cache::{cache_insert, cache_lookup, CacheEntry, CacheHit, CacheStats, SemanticCache};

use crate::classifier::{RankedEntry, RankedPrediction};
use crate::embedding::{EmbeddingError, EmbeddingProvider};
use crate::graph::{ComponentExplanation, ContainingCharacter, GraphError, GraphTools};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("knowledge graph unavailable: {0}")]
    GraphUnavailable(String),
    #[error("prediction is empty")]
    EmptyPrediction,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("invalid retrieval config: {0}")]
    Config(String),
}

pub type Result<T, E = RetrievalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub top_m: usize,
    pub min_evidence: usize,
    pub max_items: usize,
    pub cache_threshold: f64,
    pub cache_capacity: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            top_m: 3,
            min_evidence: 3,
            max_items: 12,
            cache_threshold: 0.95,
            cache_capacity: 1024,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_m == 0 {
            return Err(RetrievalError::Config("top_m must be at least 1".into()));
        }
        if self.max_items == 0 {
            return Err(RetrievalError::Config("max_items must be at least 1".into()));
        }
        if !(self.cache_threshold > 0.0 && self.cache_threshold <= 1.0) {
            return Err(RetrievalError::Config(format!(
                "cache_threshold {} outside (0, 1]",
                self.cache_threshold
            )));
        }
        Ok(())
    }

    /// Reads a TOML or JSON file (chosen by extension, TOML otherwise).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RetrievalError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RetrievalConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| RetrievalError::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| RetrievalError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn new_cache(&self) -> SemanticCache {
        SemanticCache::new(self.cache_capacity, self.cache_threshold)
            .expect("threshold checked by validate")
    }
}

/// The two externally callable graph tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalTool {
    ComponentExplanation,
    CharactersByComponent,
}

impl ExternalTool {
    pub fn as_str(self) -> &'static str {
        match self {
            ExternalTool::ComponentExplanation => "component_explanation",
            ExternalTool::CharactersByComponent => "characters_by_component",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.trim() {
            "component_explanation" => Some(ExternalTool::ComponentExplanation),
            "characters_by_component" => Some(ExternalTool::CharactersByComponent),
            _ => None,
        }
    }

    /// Canonical cache key text, `tool:argument`.
    pub fn cache_key(self, argument: &str) -> String {
        format!("{}:{argument}", self.as_str())
    }
}

/// A planned or executed external call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedCall {
    pub tool: ExternalTool,
    pub argument: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: ExternalTool,
    pub argument: String,
    /// Position of the call in the executed plan (logical, monotonic).
    pub issued_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    ComponentExplanation,
    ContainingCharacter,
    Variant,
    ModernMapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceSource {
    Tool,
    Internal,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub kind: EvidenceKind,
    pub subject: String,
    pub content: String,
    pub source: EvidenceSource,
    pub rank: usize,
    /// Set for component explanations that exist but are empty.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_explanation: bool,
    /// Component labels of a containing character.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<String>,
}

impl EvidenceItem {
    pub fn new(kind: EvidenceKind, subject: impl Into<String>, content: impl Into<String>) -> Self {
        EvidenceItem {
            kind,
            subject: subject.into(),
            content: content.into(),
            source: EvidenceSource::Tool,
            rank: 0,
            empty_explanation: false,
            components: Vec::new(),
        }
    }

    fn with_source(mut self, source: EvidenceSource) -> Self {
        self.source = source;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub character_ref: String,
    pub predicted_components: Vec<RankedEntry>,
    pub items: Vec<EvidenceItem>,
    /// External calls actually made.
    pub trace: Vec<ToolCall>,
    /// Planned calls answered by the cache instead.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cached_calls: Vec<ToolCall>,
    pub sufficient: bool,
    pub min_evidence: usize,
    pub stage2_ran: bool,
}

impl EvidenceBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serialises")
    }
}

fn explanation_item(label: &str, ex: ComponentExplanation) -> EvidenceItem {
    let empty = ex.explanation.trim().is_empty();
    let mut item = EvidenceItem::new(EvidenceKind::ComponentExplanation, label, ex.explanation);
    item.empty_explanation = empty;
    item
}

fn containing_item(label: &str, hit: ContainingCharacter) -> EvidenceItem {
    let content = if hit.interpretation.trim().is_empty() {
        "undeciphered".to_string()
    } else {
        hit.interpretation
    };
    let mut components: BTreeSet<String> = hit.co_components.into_iter().collect();
    components.insert(label.to_string());
    let mut item = EvidenceItem::new(EvidenceKind::ContainingCharacter, hit.character_id, content);
    item.components = components.into_iter().collect();
    item
}

fn graph_failure(e: GraphError) -> Option<RetrievalError> {
    match e {
        GraphError::NotFound(_) => None,
        other => Some(RetrievalError::GraphUnavailable(other.to_string())),
    }
}

/// Runs one external tool, returning its items (empty when the subject is
/// unknown to the graph).
fn run_tool<G: GraphTools + ?Sized>(graph: &G, call: &PlannedCall) -> Result<Vec<EvidenceItem>> {
    let res = match call.tool {
        ExternalTool::ComponentExplanation => graph
            .component_explanation(&call.argument)
            .map(|ex| vec![explanation_item(&call.argument, ex)]),
        ExternalTool::CharactersByComponent => graph.characters_by_component(&call.argument).map(|hits| {
            hits.into_iter()
                .map(|h| containing_item(&call.argument, h))
                .collect()
        }),
    };
    match res {
        Ok(items) => Ok(items),
        Err(e) => match graph_failure(e) {
            None => Ok(Vec::new()),
            Some(err) => Err(err),
        },
    }
}

/// The fixed stage-one call list: explanation then containing characters
/// for each of the top `top_m` predicted labels.
pub fn default_plan(predicted: &RankedPrediction, config: &RetrievalConfig) -> Vec<PlannedCall> {
    predicted
        .labels()
        .take(config.top_m)
        .flat_map(|label| {
            [ExternalTool::ComponentExplanation, ExternalTool::CharactersByComponent].map(|tool| {
                PlannedCall {
                    tool,
                    argument: label.to_string(),
                }
            })
        })
        .collect()
}

/// Deterministic cascade: [`default_plan`] followed by the fallback stage.
pub fn retrieve_evidence<G: GraphTools + ?Sized>(
    graph: &G,
    character_ref: &str,
    predicted: &RankedPrediction,
    cache: &SemanticCache,
    provider: &dyn EmbeddingProvider,
    config: &RetrievalConfig,
) -> Result<EvidenceBundle> {
    let plan = default_plan(predicted, config);
    retrieve_with_plan(graph, character_ref, predicted, &plan, cache, provider, config)
}

/// Executes an explicit stage-one plan, then the fallback stage and synthesis.
pub fn retrieve_with_plan<G: GraphTools + ?Sized>(
    graph: &G,
    character_ref: &str,
    predicted: &RankedPrediction,
    plan: &[PlannedCall],
    cache: &SemanticCache,
    provider: &dyn EmbeddingProvider,
    config: &RetrievalConfig,
) -> Result<EvidenceBundle> {
    if predicted.is_empty() {
        return Err(RetrievalError::EmptyPrediction);
    }
    let mut trace = Vec::new();
    let mut cached_calls = Vec::new();
    let mut stage1 = Vec::new();
    for (seq, call) in plan.iter().enumerate() {
        let key = call.tool.cache_key(&call.argument);
        let record = ToolCall {
            tool: call.tool,
            argument: call.argument.clone(),
            issued_at: seq as u64,
        };
        if let Some(hit) = cache.lookup(&key, provider)? {
            stage1.extend(hit.items.into_iter().map(|i| i.with_source(EvidenceSource::Cache)));
            cached_calls.push(record);
            continue;
        }
        trace.push(record);
        let items = run_tool(graph, call)?;
        cache.insert(&key, items.clone(), provider)?;
        stage1.extend(items);
    }

    let distinct: BTreeSet<(EvidenceKind, &str)> =
        stage1.iter().map(|i| (i.kind, i.subject.as_str())).collect();
    let stage2_ran = distinct.len() < config.min_evidence;
    let mut stage2 = Vec::new();
    if stage2_ran {
        let candidates: BTreeSet<&str> = stage1
            .iter()
            .filter(|i| i.kind == EvidenceKind::ContainingCharacter)
            .map(|i| i.subject.as_str())
            .collect();
        for cid in candidates {
            match graph.variant_lookup(cid) {
                Ok(v) if !v.is_empty() => stage2.push(
                    EvidenceItem::new(EvidenceKind::Variant, cid, v.join(", "))
                        .with_source(EvidenceSource::Internal),
                ),
                Ok(_) => {}
                Err(e) => {
                    if let Some(err) = graph_failure(e) {
                        return Err(err);
                    }
                }
            }
            match graph.modern_mapping(cid) {
                Ok(Some(m)) => stage2.push(
                    EvidenceItem::new(EvidenceKind::ModernMapping, cid, m)
                        .with_source(EvidenceSource::Internal),
                ),
                Ok(None) => {}
                Err(e) => {
                    if let Some(err) = graph_failure(e) {
                        return Err(err);
                    }
                }
            }
        }
    }

    let items = synthesize_bundle(stage1, stage2, predicted, config);
    Ok(EvidenceBundle {
        character_ref: character_ref.to_string(),
        predicted_components: predicted.entries.clone(),
        sufficient: items.len() >= config.min_evidence,
        items,
        trace,
        cached_calls,
        min_evidence: config.min_evidence,
        stage2_ran,
    })
}

fn kind_priority(kind: EvidenceKind) -> u8 {
    match kind {
        EvidenceKind::ComponentExplanation => 0,
        EvidenceKind::ContainingCharacter => 1,
        EvidenceKind::Variant => 2,
        EvidenceKind::ModernMapping => 3,
    }
}

fn source_priority(source: EvidenceSource) -> u8 {
    match source {
        EvidenceSource::Tool => 0,
        EvidenceSource::Internal => 1,
        EvidenceSource::Cache => 2,
    }
}

/// Deduplicates by `(kind, subject)` and orders the evidence: explanations
/// (in prediction order), containing characters (most shared predicted
/// components first), variants, then modern mappings; ties by subject.
/// Output is independent of input order.
pub fn synthesize_bundle(
    stage1: Vec<EvidenceItem>,
    stage2: Vec<EvidenceItem>,
    predicted: &RankedPrediction,
    config: &RetrievalConfig,
) -> Vec<EvidenceItem> {
    let mut best: BTreeMap<(EvidenceKind, String), EvidenceItem> = BTreeMap::new();
    for item in stage1.into_iter().chain(stage2) {
        let key = (item.kind, item.subject.clone());
        match best.get(&key) {
            Some(cur) if dedup_order(cur, &item) != Ordering::Greater => {}
            _ => {
                best.insert(key, item);
            }
        }
    }

    let predicted_labels: Vec<&str> = predicted.labels().take(config.top_m).collect();
    let position = |label: &str| {
        predicted
            .labels()
            .position(|l| l == label)
            .unwrap_or(usize::MAX)
    };
    let overlap = |item: &EvidenceItem| {
        item.components
            .iter()
            .filter(|c| predicted_labels.contains(&c.as_str()))
            .count()
    };

    let mut items: Vec<EvidenceItem> = best.into_values().collect();
    items.sort_by(|a, b| {
        kind_priority(a.kind)
            .cmp(&kind_priority(b.kind))
            .then_with(|| match a.kind {
                EvidenceKind::ComponentExplanation => position(&a.subject).cmp(&position(&b.subject)),
                EvidenceKind::ContainingCharacter => overlap(b).cmp(&overlap(a)),
                _ => Ordering::Equal,
            })
            .then_with(|| a.subject.cmp(&b.subject))
    });
    items.truncate(config.max_items);
    for (rank, item) in items.iter_mut().enumerate() {
        item.rank = rank;
    }
    items
}

fn dedup_order(a: &EvidenceItem, b: &EvidenceItem) -> Ordering {
    source_priority(a.source)
        .cmp(&source_priority(b.source))
        .then_with(|| a.content.cmp(&b.content))
        .then_with(|| a.components.cmp(&b.components))
        .then_with(|| a.empty_explanation.cmp(&b.empty_explanation))
}

/// Wraps a graph and counts external tool invocations.
pub struct CountingTools<'g, G: ?Sized> {
    inner: &'g G,
    external: AtomicUsize,
    internal: AtomicUsize,
}

impl<'g, G: GraphTools + ?Sized> CountingTools<'g, G> {
    pub fn new(inner: &'g G) -> Self {
        CountingTools {
            inner,
            external: AtomicUsize::new(0),
            internal: AtomicUsize::new(0),
        }
    }

    pub fn external_calls(&self) -> usize {
        self.external.load(AtomicOrdering::SeqCst)
    }

    pub fn internal_calls(&self) -> usize {
        self.internal.load(AtomicOrdering::SeqCst)
    }
}

impl<G: GraphTools + ?Sized> GraphTools for CountingTools<'_, G> {
    fn component_explanation(&self, label: &str) -> crate::graph::Result<ComponentExplanation> {
        self.external.fetch_add(1, AtomicOrdering::SeqCst);
        self.inner.component_explanation(label)
    }

    fn characters_by_component(&self, label: &str) -> crate::graph::Result<Vec<ContainingCharacter>> {
        self.external.fetch_add(1, AtomicOrdering::SeqCst);
        self.inner.characters_by_component(label)
    }

    fn variant_lookup(&self, character_id: &str) -> crate::graph::Result<Vec<String>> {
        self.internal.fetch_add(1, AtomicOrdering::SeqCst);
        self.inner.variant_lookup(character_id)
    }

    fn modern_mapping(&self, character_id: &str) -> crate::graph::Result<Option<String>> {
        self.internal.fetch_add(1, AtomicOrdering::SeqCst);
        self.inner.modern_mapping(character_id)
    }
}
