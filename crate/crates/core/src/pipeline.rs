//! End-to-end run over a set of characters.
//!
//! A run has two phases. Classification and retrieval go through the
//! characters in order, because they share the semantic cache and cache
//! state decides how evidence items are marked. Type inference and
//! interpretation then run on a bounded worker pool. Each character fails
//! on its own; the rest of the run continues.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::classifier::{classify_topk, ClassifierModel, RankedPrediction};
use crate::embedding::{embed_image, EmbeddingProvider};
use crate::graph::KnowledgeGraph;
use crate::inference::{
    generate_interpretation_vlm, infer_relationship, plan_retrieval, reason_interpretation, AgentRole,
    ChatBackend, InterpretationResult, Language, Mode, MultiAgentOptions, TokenUsage,
};
use crate::ingest::{CharacterRecord, Corpus};
use crate::io::{sha256_hex, write_atomic};
use crate::retrieval::{retrieve_evidence, EvidenceBundle, RetrievalConfig, SemanticCache};

pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Lookup,
    LoadImage,
    Classify,
    Retrieve,
    InferType,
    Generate,
    Persist,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub character_ref: String,
    pub stage: Stage,
    pub error: String,
}

#[derive(Clone)]
pub struct Backends {
    pub single: Arc<dyn ChatBackend>,
    pub retriever: Arc<dyn ChatBackend>,
    pub reasoner: Arc<dyn ChatBackend>,
}

impl Backends {
    /// One backend for every agent.
    pub fn shared(b: Arc<dyn ChatBackend>) -> Self {
        Backends {
            single: b.clone(),
            retriever: b.clone(),
            reasoner: b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub mode: Mode,
    pub language: Language,
    pub top_k: usize,
    pub retrieval: RetrievalConfig,
    pub workers: usize,
    pub retriever_sees_image: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            mode: Mode::Vlm,
            language: Language::Zh,
            top_k: 5,
            retrieval: RetrievalConfig::default(),
            workers: 4,
            retriever_sees_image: false,
        }
    }
}

pub struct PipelineInputs<'a> {
    /// Characters to run and their component crops.
    pub corpus: &'a Corpus,
    pub model: &'a ClassifierModel,
    pub graph: &'a KnowledgeGraph,
    pub provider: &'a dyn EmbeddingProvider,
    pub backends: &'a Backends,
    pub cache: &'a SemanticCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterOutput {
    pub prediction: RankedPrediction,
    pub bundle: EvidenceBundle,
    pub result: InterpretationResult,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    /// In the order the characters were requested.
    pub outputs: Vec<CharacterOutput>,
    pub failures: Vec<RunFailure>,
}

#[derive(Debug, thiserror::Error)]
#[error("{stage:?}: {message}")]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

fn stage_err(stage: Stage) -> impl Fn(&dyn std::fmt::Display) -> StageError {
    move |e| StageError {
        stage,
        message: e.to_string(),
    }
}

/// Ranks component labels for a character: each component crop is
/// classified and the rankings are merged by smallest distance. Without
/// readable crops the whole image is classified instead.
pub fn classify_character(
    corpus: &Corpus,
    record: &CharacterRecord,
    image: &[u8],
    model: &ClassifierModel,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<RankedPrediction, StageError> {
    let err = stage_err(Stage::Classify);
    let mut parts = Vec::new();
    for comp in corpus
        .components
        .iter()
        .filter(|c| c.source_character_id == record.character_id)
    {
        let Ok(bytes) = std::fs::read(&comp.image_ref) else {
            continue;
        };
        let emb = embed_image(provider, &bytes).map_err(|e| err(&e))?;
        parts.push(classify_topk(model, &emb, k).map_err(|e| err(&e))?);
    }
    if parts.is_empty() {
        let emb = embed_image(provider, image).map_err(|e| err(&e))?;
        return classify_topk(model, &emb, k).map_err(|e| err(&e));
    }
    let mut merged = RankedPrediction::merge_min(&parts);
    merged.entries.truncate(k);
    Ok(merged)
}

struct Prepared {
    index: usize,
    record: CharacterRecord,
    image: Vec<u8>,
    prediction: RankedPrediction,
    bundle: EvidenceBundle,
    /// Multi-agent mode: retriever usage, fallback flag, template, backend.
    retriever: Option<(TokenUsage, bool, String, String)>,
}

fn prepare(
    index: usize,
    id: &str,
    inputs: &PipelineInputs<'_>,
    settings: &RunSettings,
) -> Result<Prepared, StageError> {
    let record = inputs.corpus.character(id).cloned().ok_or_else(|| StageError {
        stage: Stage::Lookup,
        message: format!("character {id} is not in the manifest"),
    })?;
    let image = std::fs::read(&record.image_ref).map_err(|e| StageError {
        stage: Stage::LoadImage,
        message: format!("{}: {e}", record.image_ref),
    })?;
    let prediction = classify_character(
        inputs.corpus,
        &record,
        &image,
        inputs.model,
        inputs.provider,
        settings.top_k,
    )?;
    let rerr = stage_err(Stage::Retrieve);
    let (bundle, retriever) = match settings.mode {
        Mode::Vlm => (
            retrieve_evidence(
                inputs.graph,
                id,
                &prediction,
                inputs.cache,
                inputs.provider,
                &settings.retrieval,
            )
            .map_err(|e| rerr(&e))?,
            None,
        ),
        Mode::MultiAgent => {
            let out = plan_retrieval(
                inputs.backends.retriever.as_ref(),
                Some(&image),
                inputs.graph,
                id,
                &prediction,
                inputs.cache,
                inputs.provider,
                &settings.retrieval,
                MultiAgentOptions {
                    lang: settings.language,
                    retriever_sees_image: settings.retriever_sees_image,
                },
            )
            .map_err(|e| rerr(&e))?;
            (
                out.bundle,
                Some((out.usage, out.fallback, out.template_id, out.backend_name)),
            )
        }
    };
    Ok(Prepared {
        index,
        record,
        image,
        prediction,
        bundle,
        retriever,
    })
}

fn generate(p: &Prepared, backends: &Backends, settings: &RunSettings) -> Result<InterpretationResult, StageError> {
    let lang = settings.language;
    let relationship = infer_relationship(
        backends.single.as_ref(),
        Some(&p.image),
        &p.prediction,
        &p.bundle,
        lang,
    )
    .map_err(|e| stage_err(Stage::InferType)(&e))?;
    let gerr = stage_err(Stage::Generate);
    let mut result = match settings.mode {
        Mode::Vlm => generate_interpretation_vlm(backends.single.as_ref(), &p.image, &p.prediction, &p.bundle, lang)
            .map_err(|e| gerr(&e))?,
        Mode::MultiAgent => {
            let (usage, fallback, plan_tpl, retriever_name) =
                p.retriever.clone().expect("multi-agent runs prepare a retriever outcome");
            let (text, reason_usage, reason_tpl) =
                reason_interpretation(backends.reasoner.as_ref(), Some(&p.image), &p.prediction, &p.bundle, lang)
                    .map_err(|e| gerr(&e))?;
            InterpretationResult {
                character_ref: p.record.character_id.clone(),
                inscription_type: None,
                reasoning_trace: String::new(),
                interpretation: text,
                evidence_used: p.bundle.items.iter().map(|i| i.rank).collect(),
                evidence_trace: p.bundle.trace.clone(),
                cached_calls: p.bundle.cached_calls.clone(),
                mode: Mode::MultiAgent,
                token_usage: usage + reason_usage,
                agent_usage: BTreeMap::from([(AgentRole::Retriever, usage), (AgentRole::Reasoner, reason_usage)]),
                backend_names: vec![retriever_name, backends.reasoner.name().to_string()],
                language: lang,
                template_ids: vec![plan_tpl, reason_tpl],
                retries: 0,
                planner_fallback: fallback,
            }
        }
    };
    result.attach_relationship(&relationship);
    Ok(result)
}

/// Runs every stage for each requested character; an empty list means
/// every character of the corpus.
pub fn run_pipeline(inputs: &PipelineInputs<'_>, settings: &RunSettings, characters: &[String]) -> RunOutput {
    let ids: Vec<String> = if characters.is_empty() {
        inputs.corpus.characters.iter().map(|c| c.character_id.clone()).collect()
    } else {
        characters.to_vec()
    };
    let mut failures = Vec::new();
    let mut prepared = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        match prepare(i, id, inputs, settings) {
            Ok(p) => prepared.push(p),
            Err(e) => failures.push(RunFailure {
                character_ref: id.clone(),
                stage: e.stage,
                error: e.message,
            }),
        }
    }

    let slots: Mutex<Vec<Option<Result<InterpretationResult, StageError>>>> =
        Mutex::new((0..prepared.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = settings.workers.clamp(1, prepared.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = prepared.get(i) else { break };
                let r = generate(p, inputs.backends, settings);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });

    let mut outputs = Vec::new();
    let slots = slots.into_inner().unwrap_or_else(|e| e.into_inner());
    for (p, r) in prepared.into_iter().zip(slots) {
        match r.expect("every prepared character is processed") {
            Ok(result) => outputs.push((
                p.index,
                CharacterOutput {
                    prediction: p.prediction,
                    bundle: p.bundle,
                    result,
                },
            )),
            Err(e) => failures.push(RunFailure {
                character_ref: p.record.character_id,
                stage: e.stage,
                error: e.message,
            }),
        }
    }
    outputs.sort_by_key(|(i, _)| *i);
    let order: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    failures.sort_by_key(|f| order.get(f.character_ref.as_str()).copied().unwrap_or(usize::MAX));
    RunOutput {
        outputs: outputs.into_iter().map(|(_, o)| o).collect(),
        failures,
    }
}

/// Hashes that identify a run's inputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub manifest_sha256: Option<String>,
    pub model_sha256: Option<String>,
    pub graph_checksum: String,
    pub graph_source_split: String,
    pub embedding_provider: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub character_ref: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub settings: RunSettings,
    pub provenance: Provenance,
    pub template_ids: BTreeSet<String>,
    pub backend_names: BTreeSet<String>,
    pub characters_requested: usize,
    pub results: Vec<ResultEntry>,
    pub failures: Vec<RunFailure>,
    pub token_usage: TokenUsage,
    /// SHA-256 of this manifest serialised with an empty `manifest_hash`.
    pub manifest_hash: String,
}

impl RunManifest {
    fn seal(mut self) -> Self {
        self.manifest_hash = String::new();
        let body = serde_json::to_vec(&self).expect("manifest serialises");
        self.manifest_hash = sha256_hex(&body);
        self
    }

    /// Recomputes the hash and compares it with the stored one.
    pub fn verify(&self) -> bool {
        self.clone().seal().manifest_hash == self.manifest_hash
    }
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("value serialises");
    b.push(b'\n');
    b
}

/// Writes `results/<id>.json`, `evidence/<id>.json` and `run_manifest.json`
/// under `out_dir`. Files are written atomically.
pub fn write_run(
    out_dir: &Path,
    output: &RunOutput,
    settings: &RunSettings,
    provenance: Provenance,
    characters_requested: usize,
) -> std::io::Result<RunManifest> {
    std::fs::create_dir_all(out_dir.join("results"))?;
    std::fs::create_dir_all(out_dir.join("evidence"))?;
    let mut results = Vec::new();
    let mut template_ids = BTreeSet::new();
    let mut backend_names = BTreeSet::new();
    let mut usage = TokenUsage::default();
    for o in &output.outputs {
        let name = file_safe(&o.result.character_ref);
        let rel = format!("results/{name}.json");
        let bytes = pretty(&o.result);
        write_atomic(&out_dir.join(&rel), &bytes)?;
        write_atomic(&out_dir.join(format!("evidence/{name}.json")), &pretty(&o.bundle))?;
        results.push(ResultEntry {
            character_ref: o.result.character_ref.clone(),
            path: rel,
            sha256: sha256_hex(&bytes),
        });
        template_ids.extend(o.result.template_ids.iter().cloned());
        backend_names.extend(o.result.backend_names.iter().cloned());
        usage += o.result.token_usage;
    }
    let manifest = RunManifest {
        schema_version: RUN_SCHEMA_VERSION,
        settings: settings.clone(),
        provenance,
        template_ids,
        backend_names,
        characters_requested,
        results,
        failures: output.failures.clone(),
        token_usage: usage,
        manifest_hash: String::new(),
    }
    .seal();
    write_atomic(&out_dir.join("run_manifest.json"), &pretty(&manifest))?;
    Ok(manifest)
}

/// Reads every `results/*.json` file of a run directory, sorted by name.
pub fn load_results(run_dir: &Path) -> std::io::Result<Vec<InterpretationResult>> {
    let dir = run_dir.join("results");
    let dir = if dir.is_dir() { dir } else { run_dir.to_path_buf() };
    let mut paths: Vec<_> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let bytes = std::fs::read(&p)?;
        let r: InterpretationResult = serde_json::from_slice(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))?;
        out.push(r);
    }
    Ok(out)
}
