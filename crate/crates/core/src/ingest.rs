//! Annotation ingestion, corpus records, statistics and splits.
//!
//! Annotation files follow a minimal LabelMe-compatible subset:
//!
//! ```json
//! {"imagePath": "hand_01.png", "imageWidth": 64, "imageHeight": 64,
//!  "shapes": [{"label": "hand", "points": [[1,1],[10,1],[10,10],[1,10]]}]}
//! ```
//!
//! Extra fields (`version`, `flags`, `shape_type`, ...) are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("schema violation in shape {shape}: {reason}")]
    SchemaViolation { shape: usize, reason: String },
    #[error("schema violation: {0}")]
    FileSchema(String),
    #[error("unknown label {label:?} in shape {shape}")]
    UnknownLabel { label: String, shape: usize },
    #[error("invalid split ratio {0}; expected a value in (0, 1)")]
    InvalidRatio(f64),
    #[error("inconsistent corpus: {0}")]
    InconsistentCorpus(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// The three-way character taxonomy used for relationship inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InscriptionType {
    Ideographic,
    Pictographic,
    #[serde(rename = "phono_semantic", alias = "phono-semantic")]
    PhonoSemantic,
}

impl InscriptionType {
    pub const ALL: [InscriptionType; 3] = [
        InscriptionType::Ideographic,
        InscriptionType::Pictographic,
        InscriptionType::PhonoSemantic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InscriptionType::Ideographic => "ideographic",
            InscriptionType::Pictographic => "pictographic",
            InscriptionType::PhonoSemantic => "phono-semantic",
        }
    }
}

impl fmt::Display for InscriptionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InscriptionType {
    type Err = String;

    /// Accepts the English names (with `-`, `_` or no separator) and the
    /// conventional Chinese terms.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match norm.as_str() {
            "ideographic" | "会意" | "會意" => Ok(InscriptionType::Ideographic),
            "pictographic" | "象形" => Ok(InscriptionType::Pictographic),
            "phonosemantic" | "形声" | "形聲" => Ok(InscriptionType::PhonoSemantic),
            _ => Err(format!("not an inscription type: {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub label: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationFile {
    pub image_path: String,
    pub image_width: u32,
    pub image_height: u32,
    pub shapes: Vec<Shape>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    #[serde(rename = "imagePath")]
    image_path: Option<String>,
    #[serde(rename = "imageWidth")]
    image_width: Option<serde_json::Value>,
    #[serde(rename = "imageHeight")]
    image_height: Option<serde_json::Value>,
    shapes: Option<Vec<serde_json::Value>>,
}

fn positive_dim(v: Option<serde_json::Value>, name: &str) -> Result<u32> {
    let v = v.ok_or_else(|| IngestError::FileSchema(format!("missing field {name}")))?;
    match v.as_u64() {
        Some(n) if n > 0 && n <= u32::MAX as u64 => Ok(n as u32),
        _ => Err(IngestError::FileSchema(format!(
            "{name} must be a positive integer, got {v}"
        ))),
    }
}

fn parse_shape(idx: usize, raw: &serde_json::Value, width: f64, height: f64) -> Result<Shape> {
    let violation = |reason: String| IngestError::SchemaViolation { shape: idx, reason };
    let obj = raw
        .as_object()
        .ok_or_else(|| violation("shape is not an object".into()))?;
    let label = obj
        .get("label")
        .and_then(|l| l.as_str())
        .ok_or_else(|| violation("missing field label".into()))?
        .trim()
        .to_string();
    if label.is_empty() {
        return Err(violation("empty label".into()));
    }
    let raw_points = obj
        .get("points")
        .and_then(|p| p.as_array())
        .ok_or_else(|| violation("missing field points".into()))?;
    if raw_points.len() < 3 {
        return Err(violation(format!(
            "polygon needs at least 3 points, got {}",
            raw_points.len()
        )));
    }
    let mut points = Vec::with_capacity(raw_points.len());
    for (pi, p) in raw_points.iter().enumerate() {
        let pair = p.as_array().filter(|a| a.len() == 2);
        let (x, y) = match pair.map(|a| (a[0].as_f64(), a[1].as_f64())) {
            Some((Some(x), Some(y))) if x.is_finite() && y.is_finite() => (x, y),
            _ => return Err(violation(format!("point {pi} is not an [x, y] pair"))),
        };
        // boundary points are legal
        if !(0.0..=width).contains(&x) || !(0.0..=height).contains(&y) {
            return Err(violation(format!(
                "point {pi} ({x}, {y}) lies outside {width}x{height}"
            )));
        }
        points.push(Point { x, y });
    }
    Ok(Shape { label, points })
}

/// Parses and validates one annotation file.
pub fn parse_annotation(raw: &[u8]) -> Result<AnnotationFile> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| IngestError::MalformedInput(format!("not UTF-8: {e}")))?;
    let parsed: RawAnnotation =
        serde_json::from_str(text).map_err(|e| IngestError::MalformedInput(e.to_string()))?;
    let image_path = parsed
        .image_path
        .ok_or_else(|| IngestError::FileSchema("missing field imagePath".into()))?;
    let image_width = positive_dim(parsed.image_width, "imageWidth")?;
    let image_height = positive_dim(parsed.image_height, "imageHeight")?;
    let raw_shapes = parsed
        .shapes
        .ok_or_else(|| IngestError::FileSchema("missing field shapes".into()))?;
    if raw_shapes.is_empty() {
        return Err(IngestError::FileSchema("shapes is empty".into()));
    }
    let shapes = raw_shapes
        .iter()
        .enumerate()
        .map(|(i, s)| parse_shape(i, s, image_width as f64, image_height as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotationFile {
        image_path,
        image_width,
        image_height,
        shapes,
    })
}

/// Controlled component vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary(BTreeSet<String>);

impl Vocabulary {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Vocabulary(labels.into_iter().map(Into::into).collect())
    }

    /// One label per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        Vocabulary::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Vocabulary::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(label)
    }

    pub fn insert(&mut self, label: impl Into<String>) {
        self.0.insert(label.into());
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub component_id: String,
    pub label: String,
    pub source_character_id: String,
    pub polygon: Vec<Point>,
    pub image_ref: String,
    #[serde(default)]
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterRecord {
    pub character_id: String,
    pub image_ref: String,
    pub component_labels: Vec<String>,
    #[serde(default)]
    pub interpretation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inscription_type: Option<InscriptionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modern_form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_group: Option<String>,
}

impl CharacterRecord {
    /// Identity used when counting unique characters: images in the same
    /// variant group are one character, then images sharing a modern form,
    /// otherwise each image stands alone.
    pub fn identity(&self) -> String {
        if let Some(g) = &self.variant_group {
            format!("group:{g}")
        } else if let Some(m) = &self.modern_form {
            format!("modern:{m}")
        } else {
            format!("id:{}", self.character_id)
        }
    }
}

/// Deterministic component identifier for shape `index` of a character.
pub fn component_id(character_id: &str, index: usize) -> String {
    format!("{character_id}#{index}")
}

/// One record per shape, labels checked against the vocabulary.
pub fn extract_components(
    file: &AnnotationFile,
    vocabulary: &Vocabulary,
    character_id: &str,
) -> Result<Vec<ComponentRecord>> {
    file.shapes
        .iter()
        .enumerate()
        .map(|(idx, shape)| {
            if !vocabulary.contains(&shape.label) {
                return Err(IngestError::UnknownLabel {
                    label: shape.label.clone(),
                    shape: idx,
                });
            }
            let id = component_id(character_id, idx);
            Ok(ComponentRecord {
                image_ref: format!("crops/{}.png", crop_stem(&id)),
                component_id: id,
                label: shape.label.clone(),
                source_character_id: character_id.to_string(),
                polygon: shape.points.clone(),
                explanation: String::new(),
            })
        })
        .collect()
}

/// File stem used for pre-cropped component images (`#` is awkward in paths).
pub fn crop_stem(component_id: &str) -> String {
    component_id.replace('#', "_")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub characters: Vec<CharacterRecord>,
    pub components: Vec<ComponentRecord>,
    pub vocabulary: Vocabulary,
}

impl Corpus {
    pub fn validate(&self) -> Result<()> {
        let ids: BTreeSet<&str> = self
            .characters
            .iter()
            .map(|c| c.character_id.as_str())
            .collect();
        if ids.len() != self.characters.len() {
            return Err(IngestError::InconsistentCorpus(
                "duplicate character_id".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for comp in &self.components {
            if !seen.insert(comp.component_id.as_str()) {
                return Err(IngestError::InconsistentCorpus(format!(
                    "duplicate component_id {}",
                    comp.component_id
                )));
            }
            if !ids.contains(comp.source_character_id.as_str()) {
                return Err(IngestError::InconsistentCorpus(format!(
                    "component {} references unknown character {}",
                    comp.component_id, comp.source_character_id
                )));
            }
            if !self.vocabulary.contains(&comp.label) {
                return Err(IngestError::InconsistentCorpus(format!(
                    "component {} has label {:?} outside the vocabulary",
                    comp.component_id, comp.label
                )));
            }
        }
        Ok(())
    }

    pub fn character(&self, id: &str) -> Option<&CharacterRecord> {
        self.characters.iter().find(|c| c.character_id == id)
    }
}

/// Optional per-character metadata joined onto annotation files at ingest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterMetadata {
    pub character_id: String,
    #[serde(default)]
    pub interpretation: String,
    #[serde(default)]
    pub inscription_type: Option<InscriptionType>,
    #[serde(default)]
    pub modern_form: Option<String>,
    #[serde(default)]
    pub variant_group: Option<String>,
}

pub fn load_metadata(path: &Path) -> Result<BTreeMap<String, CharacterMetadata>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = BTreeMap::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: CharacterMetadata =
            serde_json::from_str(&line).map_err(|e| IngestError::Manifest {
                line: i + 1,
                reason: e.to_string(),
            })?;
        out.insert(m.character_id.clone(), m);
    }
    Ok(out)
}

/// Ingests every `*.json` annotation file in `dir` (sorted by name). The
/// character id is the file stem; image paths are joined onto `dir`.
pub fn ingest_directory(
    dir: &Path,
    vocabulary: &Vocabulary,
    metadata: &BTreeMap<String, CharacterMetadata>,
) -> Result<Corpus> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();

    let mut corpus = Corpus {
        vocabulary: vocabulary.clone(),
        ..Corpus::default()
    };
    for path in paths {
        let character_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| IngestError::MalformedInput(format!("bad file name {path:?}")))?
            .to_string();
        let file = parse_annotation(&std::fs::read(&path)?).map_err(|e| match e {
            IngestError::MalformedInput(m) => {
                IngestError::MalformedInput(format!("{}: {m}", path.display()))
            }
            other => other,
        })?;
        let mut components = extract_components(&file, vocabulary, &character_id)?;
        for c in &mut components {
            c.image_ref = dir.join(&c.image_ref).to_string_lossy().into_owned();
        }
        let meta = metadata.get(&character_id).cloned().unwrap_or_default();
        corpus.characters.push(CharacterRecord {
            character_id: character_id.clone(),
            image_ref: dir.join(&file.image_path).to_string_lossy().into_owned(),
            component_labels: components.iter().map(|c| c.label.clone()).collect(),
            interpretation: meta.interpretation,
            inscription_type: meta.inscription_type,
            modern_form: meta.modern_form,
            variant_group: meta.variant_group,
        });
        corpus.components.extend(components);
    }
    corpus.validate()?;
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub character_images: usize,
    pub unique_characters: usize,
    pub component_images: usize,
    pub distinct_components: usize,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    CorpusStats {
        character_images: corpus.characters.len(),
        unique_characters: corpus
            .characters
            .iter()
            .map(CharacterRecord::identity)
            .collect::<BTreeSet<_>>()
            .len(),
        component_images: corpus.components.len(),
        distinct_components: corpus
            .components
            .iter()
            .map(|c| c.label.as_str())
            .collect::<BTreeSet<_>>()
            .len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    ByComponentClass,
    ByCharacter,
}

impl FromStr for SplitUnit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "by_component_class" => Ok(SplitUnit::ByComponentClass),
            "by_character" => Ok(SplitUnit::ByCharacter),
            other => Err(format!("unknown split unit {other:?}")),
        }
    }
}

/// Train share of a class of `n` items: `ceil(ratio * n)`, at least one.
pub fn train_count(ratio: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    // guard against 0.7 * 20 = 14.000000000000002
    let raw = (ratio * n as f64 - 1e-9).ceil() as usize;
    raw.clamp(1, n)
}

fn take_train<'a>(ids: &mut Vec<&'a str>, ratio: f64, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    ids.sort_unstable();
    ids.shuffle(rng);
    let k = train_count(ratio, ids.len());
    ids.drain(..k).collect()
}

/// Splits a corpus into train and test sides.
///
/// `ByComponentClass` stratifies component records per label; each side keeps
/// the characters its components come from, so a character may appear on both
/// sides. `ByCharacter` partitions characters and moves their components with
/// them.
pub fn split_corpus(
    corpus: &Corpus,
    ratio: f64,
    seed: u64,
    unit: SplitUnit,
) -> Result<(Corpus, Corpus)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(IngestError::InvalidRatio(ratio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Corpus {
        vocabulary: corpus.vocabulary.clone(),
        ..Corpus::default()
    };
    let mut test = train.clone();

    match unit {
        SplitUnit::ByComponentClass => {
            let mut by_label: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for c in &corpus.components {
                by_label
                    .entry(c.label.as_str())
                    .or_default()
                    .push(c.component_id.as_str());
            }
            let mut train_ids = BTreeSet::new();
            for ids in by_label.values_mut() {
                train_ids.extend(take_train(ids, ratio, &mut rng));
            }
            let mut train_chars = BTreeSet::new();
            let mut test_chars = BTreeSet::new();
            for c in &corpus.components {
                if train_ids.contains(c.component_id.as_str()) {
                    train_chars.insert(c.source_character_id.as_str());
                    train.components.push(c.clone());
                } else {
                    test_chars.insert(c.source_character_id.as_str());
                    test.components.push(c.clone());
                }
            }
            for ch in &corpus.characters {
                if train_chars.contains(ch.character_id.as_str()) {
                    train.characters.push(ch.clone());
                }
                if test_chars.contains(ch.character_id.as_str()) {
                    test.characters.push(ch.clone());
                }
            }
        }
        SplitUnit::ByCharacter => {
            let mut ids: Vec<&str> = corpus
                .characters
                .iter()
                .map(|c| c.character_id.as_str())
                .collect();
            let train_ids: BTreeSet<&str> = take_train(&mut ids, ratio, &mut rng).into_iter().collect();
            for ch in &corpus.characters {
                if train_ids.contains(ch.character_id.as_str()) {
                    train.characters.push(ch.clone());
                } else {
                    test.characters.push(ch.clone());
                }
            }
            for c in &corpus.components {
                if train_ids.contains(c.source_character_id.as_str()) {
                    train.components.push(c.clone());
                } else {
                    test.components.push(c.clone());
                }
            }
        }
    }
    Ok((train, test))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestRecord {
    Character(CharacterRecord),
    Component(ComponentRecord),
}

/// Writes the corpus as line-delimited JSON, characters first.
pub fn write_manifest<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for ch in &corpus.characters {
        serde_json::to_writer(&mut out, &ManifestRecord::Character(ch.clone()))
            .map_err(|e| IngestError::MalformedInput(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    for c in &corpus.components {
        serde_json::to_writer(&mut out, &ManifestRecord::Component(c.clone()))
            .map_err(|e| IngestError::MalformedInput(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn manifest_bytes(corpus: &Corpus) -> Vec<u8> {
    let mut buf = Vec::new();
    write_manifest(corpus, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Reads a manifest. The vocabulary is the set of component labels present;
/// character component labels must all belong to it.
pub fn read_manifest<R: BufRead>(input: R) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| IngestError::Manifest {
            line: i + 1,
            reason: e.to_string(),
        })?;
        match rec {
            ManifestRecord::Character(c) => corpus.characters.push(c),
            ManifestRecord::Component(c) => {
                corpus.vocabulary.insert(c.label.clone());
                corpus.components.push(c);
            }
        }
    }
    corpus.validate()?;
    Ok(corpus)
}

pub fn load_manifest(path: &Path) -> Result<Corpus> {
    read_manifest(std::io::BufReader::new(std::fs::File::open(path)?))
}
