//! Accuracy metrics and run-level report assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::judge::{judge_template_id, llm_judge};
use super::text::{embedding_f1, rouge1_f1, tokenize, Tokenizer};
use super::transport::{mover_score, IdfTable, MoverOptions};
use super::MetricError;
use crate::classifier::RankedPrediction;
use crate::embedding::EmbeddingProvider;
use crate::inference::{ChatBackend, InterpretationResult, TokenUsage};
use crate::ingest::{CharacterRecord, InscriptionType};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub fn topk_accuracy(predictions: &[RankedPrediction], gold: &[String], k: usize) -> Result<f64, MetricError> {
    if predictions.len() != gold.len() {
        return Err(MetricError::LengthMismatch {
            left: predictions.len(),
            right: gold.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = predictions
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.contains_within(g, k))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

pub fn classification_accuracy(predicted: &[InscriptionType], gold: &[InscriptionType]) -> Result<f64, MetricError> {
    if predicted.len() != gold.len() {
        return Err(MetricError::LengthMismatch {
            left: predicted.len(),
            right: gold.len(),
        });
    }
    if predicted.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rouge1,
    EmbeddingF1,
    Mover,
    Judge,
    TypeAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Rouge1,
        Metric::EmbeddingF1,
        Metric::Mover,
        Metric::Judge,
        Metric::TypeAccuracy,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Rouge1 => "rouge1",
            Metric::EmbeddingF1 => "embedding_f1",
            Metric::Mover => "mover",
            Metric::Judge => "judge",
            Metric::TypeAccuracy => "type_accuracy",
        }
    }

    /// Human-readable name, explicit about the formulation.
    pub fn label(self) -> &'static str {
        match self {
            Metric::Rouge1 => "ROUGE-1 F1",
            Metric::EmbeddingF1 => "embedding-F1 (BERTScore-style, greedy, no IDF)",
            Metric::Mover => "mover score (1 - exact word mover's distance)",
            Metric::Judge => "LLM judge",
            Metric::TypeAccuracy => "inscription-type accuracy",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "rouge1" | "rouge" => Ok(Metric::Rouge1),
            "embedding_f1" | "bertscore" => Ok(Metric::EmbeddingF1),
            "mover" | "moverscore" | "mover_score" => Ok(Metric::Mover),
            "judge" | "llm_judge" => Ok(Metric::Judge),
            "type_accuracy" | "type" | "acc" => Ok(Metric::TypeAccuracy),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

/// Parses a comma-separated metric list.
pub fn parse_metrics(list: &str) -> Result<BTreeSet<Metric>, String> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub metrics: BTreeSet<Metric>,
    /// IDF weighting for the mover score; off by default.
    pub mover_idf: bool,
    pub split_hash: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: [Metric::Rouge1, Metric::EmbeddingF1, Metric::Mover, Metric::TypeAccuracy]
                .into_iter()
                .collect(),
            mover_idf: false,
            split_hash: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub character_ref: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub character_ref: String,
    pub metric: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model_names: Vec<String>,
    pub template_ids: Vec<String>,
    pub split_hash: Option<String>,
    pub embedding_provider: String,
    pub tokenizers: BTreeMap<String, String>,
    pub metric_labels: BTreeMap<String, String>,
    pub mover_idf: bool,
    pub items: usize,
    pub mean_token_usage: f64,
    /// Per-item metric failures; those scores are left out of the means.
    pub failures: Vec<ItemFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub metadata: ReportMetadata,
    pub per_item: Vec<ItemScores>,
    /// Mean of the per-item scores of each metric.
    pub aggregate: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let keys: Vec<&String> = self.aggregate.keys().collect();
        let _ = write!(out, "{:<16}", "character");
        for k in &keys {
            let _ = write!(out, " {k:>14}");
        }
        out.push('\n');
        for item in &self.per_item {
            let _ = write!(out, "{:<16}", item.character_ref);
            for k in &keys {
                match item.scores.get(*k) {
                    Some(v) => {
                        let _ = write!(out, " {v:>14.4}");
                    }
                    None => {
                        let _ = write!(out, " {:>14}", "-");
                    }
                }
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<16}", "mean");
        for k in &keys {
            let _ = write!(out, " {:>14.4}", self.aggregate[*k]);
        }
        out.push('\n');
        out
    }
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

/// Scores every result against the gold record with the same id.
pub fn evaluate_run(
    results: &[InterpretationResult],
    gold: &[CharacterRecord],
    config: &EvalConfig,
    provider: &dyn EmbeddingProvider,
    judge: Option<&dyn ChatBackend>,
) -> Result<MetricReport, MetricError> {
    if results.is_empty() {
        return Err(MetricError::Alignment("no results to evaluate".into()));
    }
    if config.metrics.contains(&Metric::Judge) && judge.is_none() {
        return Err(MetricError::Alignment("judge metric requested without a judge backend".into()));
    }
    let by_id: BTreeMap<&str, &CharacterRecord> = gold.iter().map(|c| (c.character_id.as_str(), c)).collect();
    let mut pairs = Vec::with_capacity(results.len());
    for r in results {
        let g = by_id
            .get(r.character_ref.as_str())
            .ok_or_else(|| MetricError::Alignment(format!("no gold record for {}", r.character_ref)))?;
        pairs.push((r, *g));
    }

    let idf = if config.mover_idf {
        let docs: Vec<_> = pairs
            .iter()
            .map(|(r, g)| tokenize(&g.interpretation, Tokenizer::for_language(r.language)))
            .collect();
        Some(IdfTable::from_documents(&docs))
    } else {
        None
    };

    let mut meta = ReportMetadata {
        model_names: Vec::new(),
        template_ids: Vec::new(),
        split_hash: config.split_hash.clone(),
        embedding_provider: provider.name().to_string(),
        tokenizers: BTreeMap::new(),
        metric_labels: config.metrics.iter().map(|m| (m.key().to_string(), m.label().to_string())).collect(),
        mover_idf: config.mover_idf,
        items: pairs.len(),
        mean_token_usage: 0.0,
        failures: Vec::new(),
    };
    let mut judge_usage = TokenUsage::default();
    let mut per_item = Vec::with_capacity(pairs.len());
    for (r, g) in &pairs {
        for n in &r.backend_names {
            push_unique(&mut meta.model_names, n);
        }
        for t in &r.template_ids {
            push_unique(&mut meta.template_ids, t);
        }
        let tok = Tokenizer::for_language(r.language);
        meta.tokenizers.insert(r.language.as_str().to_string(), tok.as_str().to_string());
        let cand = tokenize(&r.interpretation, tok);
        let reference = tokenize(&g.interpretation, tok);
        let mut scores = BTreeMap::new();
        let mut fail = |metric: Metric, e: &dyn std::fmt::Display| {
            meta.failures.push(ItemFailure {
                character_ref: r.character_ref.clone(),
                metric: metric.key().to_string(),
                error: e.to_string(),
            })
        };
        for &m in &config.metrics {
            let value = match m {
                Metric::Rouge1 => rouge1_f1(&cand, &reference).map(Some),
                Metric::EmbeddingF1 => embedding_f1(&cand, &reference, provider).map(Some),
                Metric::Mover => mover_score(&cand, &reference, provider, MoverOptions { idf: idf.as_ref() }).map(Some),
                Metric::Judge => {
                    if g.interpretation.trim().is_empty() {
                        Err(MetricError::EmptyReference)
                    } else {
                        let b = judge.expect("checked above");
                        llm_judge(b, &r.interpretation, &g.interpretation)
                            .map(|s| {
                                judge_usage += s.usage;
                                Some(s.score)
                            })
                            .map_err(|e| MetricError::Judge(e.to_string()))
                    }
                }
                Metric::TypeAccuracy => Ok(g.inscription_type.map(|gt| {
                    if r.inscription_type == Some(gt) {
                        1.0
                    } else {
                        0.0
                    }
                })),
            };
            match value {
                Ok(Some(v)) => {
                    scores.insert(m.key().to_string(), v);
                }
                Ok(None) => {}
                Err(e) => fail(m, &e),
            }
        }
        per_item.push(ItemScores {
            character_ref: r.character_ref.clone(),
            scores,
        });
    }
    if config.metrics.contains(&Metric::Judge) {
        push_unique(&mut meta.template_ids, judge_template_id());
        if let Some(b) = judge {
            push_unique(&mut meta.model_names, b.name());
        }
    }
    meta.mean_token_usage =
        pairs.iter().map(|(r, _)| r.token_usage.total() as f64).sum::<f64>() / pairs.len() as f64;

    let mut aggregate = BTreeMap::new();
    for m in &config.metrics {
        let vals: Vec<f64> = per_item.iter().filter_map(|i| i.scores.get(m.key()).copied()).collect();
        if !vals.is_empty() {
            aggregate.insert(m.key().to_string(), vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    Ok(MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        metadata: meta,
        per_item,
        aggregate,
    })
}
