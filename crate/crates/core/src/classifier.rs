//! Nearest-prototype component classifier.
//!
//! Each component class is represented by the mean of its support
//! embeddings; a query is ranked against every prototype by Euclidean
//! distance (exact scan, ties broken by label).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{squared_distance, EmbeddingError, EmbeddingVector};

const MODEL_MAGIC: &[u8; 8] = b"OBSPROTO";
const MODEL_VERSION: u32 = 1;
const FLAG_NORMALIZED: u8 = 0b1;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("model has no prototypes")]
    EmptyModel,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("variant index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("model was built with provider {model:?} but queried with {query:?}")]
    ProviderMismatch { model: String, query: String },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ClassifierError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub label: String,
    pub mean: EmbeddingVector,
    pub support_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub prototypes: BTreeMap<String, Prototype>,
    pub dim: usize,
    pub provider_name: String,
    /// Embeddings were L2-normalised before averaging; queries get the same.
    pub normalized: bool,
}

/// Ranked labels with ascending distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub entries: Vec<RankedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub label: String,
    pub distance: f64,
}

impl RankedPrediction {
    pub fn top(&self) -> Option<&str> {
        self.entries.first().map(|e| e.label.as_str())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    pub fn contains_within(&self, label: &str, k: usize) -> bool {
        self.entries.iter().take(k).any(|e| e.label == label)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Merges several rankings, keeping each label's smallest distance.
    pub fn merge_min<'a>(parts: impl IntoIterator<Item = &'a RankedPrediction>) -> Self {
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for p in parts {
            for e in &p.entries {
                best.entry(e.label.as_str())
                    .and_modify(|d| *d = d.min(e.distance))
                    .or_insert(e.distance);
            }
        }
        let mut entries: Vec<RankedEntry> = best
            .into_iter()
            .map(|(l, d)| RankedEntry {
                label: l.to_string(),
                distance: d,
            })
            .collect();
        entries.sort_by(|a, b| a.distance.total_cmp(&b.distance));
        RankedPrediction { entries }
    }
}

/// Builds one prototype per label from `(label, embedding)` pairs.
pub fn build_prototypes(
    train: &[(String, EmbeddingVector)],
    provider_name: &str,
    normalize: bool,
) -> Result<ClassifierModel> {
    let dim = train.first().ok_or(ClassifierError::EmptyTrainingSet)?.1.dim();
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for (label, emb) in train {
        if emb.dim() != dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: dim,
                actual: emb.dim(),
            });
        }
        let owned;
        let values = if normalize {
            owned = emb.normalized()?;
            owned.values()
        } else {
            emb.values()
        };
        let (acc, n) = sums
            .entry(label.as_str())
            .or_insert_with(|| (vec![0.0; dim], 0));
        acc.iter_mut().zip(values).for_each(|(a, v)| *a += v);
        *n += 1;
    }
    let prototypes = sums
        .into_iter()
        .map(|(label, (acc, n))| {
            let mean = acc.into_iter().map(|s| s / n as f64).collect();
            let proto = Prototype {
                label: label.to_string(),
                mean: EmbeddingVector::new(mean)?,
                support_count: n,
            };
            Ok((label.to_string(), proto))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(ClassifierModel {
        prototypes,
        dim,
        provider_name: provider_name.to_string(),
        normalized: normalize,
    })
}

impl ClassifierModel {
    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn ensure_provider(&self, provider_name: &str) -> Result<()> {
        if self.provider_name != provider_name {
            return Err(ClassifierError::ProviderMismatch {
                model: self.provider_name.clone(),
                query: provider_name.to_string(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ClassifierModel::from_bytes(&std::fs::read(path)?)
    }

    /// Loads a model and rejects it unless it was built with `provider_name`.
    pub fn load_for_provider(path: &Path, provider_name: &str) -> Result<Self> {
        let model = ClassifierModel::load(path)?;
        model.ensure_provider(provider_name)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(if self.normalized { FLAG_NORMALIZED } else { 0 });
        write_str(&mut out, &self.provider_name);
        out.extend_from_slice(&(self.prototypes.len() as u32).to_le_bytes());
        for p in self.prototypes.values() {
            write_str(&mut out, &p.label);
            out.extend_from_slice(&(p.support_count as u64).to_le_bytes());
            for v in p.mean.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(ClassifierError::CorruptModel("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(ClassifierError::CorruptModel(format!(
                "unsupported version {version}"
            )));
        }
        let dim = read_u32(&mut r)? as usize;
        let mut flags = [0u8; 1];
        read_exact(&mut r, &mut flags)?;
        let provider_name = read_str(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let mut prototypes = BTreeMap::new();
        for _ in 0..count {
            let label = read_str(&mut r)?;
            let mut n = [0u8; 8];
            read_exact(&mut r, &mut n)?;
            let support_count = u64::from_le_bytes(n) as usize;
            if support_count == 0 {
                return Err(ClassifierError::CorruptModel(format!(
                    "class {label:?} has zero support"
                )));
            }
            let mut mean = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                mean.push(f64::from_le_bytes(b));
            }
            let mean = EmbeddingVector::new(mean)
                .map_err(|e| ClassifierError::CorruptModel(e.to_string()))?;
            if prototypes
                .insert(
                    label.clone(),
                    Prototype {
                        label: label.clone(),
                        mean,
                        support_count,
                    },
                )
                .is_some()
            {
                return Err(ClassifierError::CorruptModel(format!(
                    "duplicate label {label:?}"
                )));
            }
        }
        if !r.is_empty() {
            return Err(ClassifierError::CorruptModel("trailing bytes".into()));
        }
        Ok(ClassifierModel {
            prototypes,
            dim,
            provider_name,
            normalized: flags[0] & FLAG_NORMALIZED != 0,
        })
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| ClassifierError::CorruptModel("unexpected end of file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut &[u8]) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > r.len() {
        return Err(ClassifierError::CorruptModel("string overruns file".into()));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| ClassifierError::CorruptModel("label is not UTF-8".into()))
}

/// Sorts `(id, distance)` ascending by distance; equal distances keep the
/// incoming (identifier-sorted) order.
fn rank_by_distance<T>(mut scored: Vec<(T, f64)>, k: usize) -> Vec<(T, f64)> {
    scored.sort_by(|a, b| a.1.total_cmp(&b.1));
    scored.truncate(k);
    scored
}

pub fn classify_topk(
    model: &ClassifierModel,
    query: &EmbeddingVector,
    k: usize,
) -> Result<RankedPrediction> {
    if k == 0 {
        return Err(ClassifierError::ZeroK);
    }
    if model.prototypes.is_empty() {
        return Err(ClassifierError::EmptyModel);
    }
    if query.dim() != model.dim {
        return Err(ClassifierError::DimensionMismatch {
            expected: model.dim,
            actual: query.dim(),
        });
    }
    let owned;
    let q = if model.normalized {
        owned = query.normalized()?;
        owned.values()
    } else {
        query.values()
    };
    // BTreeMap iteration is label-sorted, so the stable sort breaks ties by label
    let scored = model
        .prototypes
        .values()
        .map(|p| (p.label.as_str(), squared_distance(q, p.mean.values())))
        .collect();
    let entries = rank_by_distance(scored, k)
        .into_iter()
        .map(|(label, d2)| RankedEntry {
            label: label.to_string(),
            distance: d2.sqrt(),
        })
        .collect();
    Ok(RankedPrediction { entries })
}

/// ACC@k for every requested k.
pub fn evaluate_topk(
    model: &ClassifierModel,
    test: &[(String, EmbeddingVector)],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    if test.is_empty() {
        return Err(ClassifierError::EmptyTestSet);
    }
    if ks.contains(&0) {
        return Err(ClassifierError::ZeroK);
    }
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for (gold, query) in test {
        let ranked = classify_topk(model, query, kmax)?;
        let pos = ranked.entries.iter().position(|e| &e.label == gold);
        for (&k, h) in hits.iter_mut() {
            if pos.is_some_and(|p| p < k) {
                *h += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|(k, h)| (k, h as f64 / test.len() as f64))
        .collect())
}

/// Nearest-neighbour ranking over one embedding per indexed character.
pub fn variant_search(
    index: &[(String, EmbeddingVector)],
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(ClassifierError::ZeroK);
    }
    if index.is_empty() {
        return Err(ClassifierError::EmptyIndex);
    }
    let mut sorted: Vec<&(String, EmbeddingVector)> = index.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut scored = Vec::with_capacity(sorted.len());
    for (id, v) in sorted {
        if v.dim() != query.dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: query.dim(),
                actual: v.dim(),
            });
        }
        scored.push((id.as_str(), squared_distance(query.values(), v.values())));
    }
    Ok(rank_by_distance(scored, k)
        .into_iter()
        .map(|(id, d2)| (id.to_string(), d2.sqrt()))
        .collect())
}

/// Top-k hit rate of variant queries against their canonical characters.
pub fn variant_topk_accuracy(
    index: &[(String, EmbeddingVector)],
    queries: &[(EmbeddingVector, String)],
    k: usize,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(ClassifierError::EmptyTestSet);
    }
    let mut hits = 0usize;
    for (q, canonical) in queries {
        if variant_search(index, q, k)?.iter().any(|(id, _)| id == canonical) {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}
