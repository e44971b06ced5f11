//! Synthetic demo corpus.
//!
//! Writes a small annotation directory in the same layout real data uses:
//! LabelMe-style JSON files, character images, pre-cropped component
//! images, a vocabulary file, character metadata and component
//! explanations. Image files are placeholder bytes, not decodable PNGs;
//! each component label has two crop byte patterns so that hash-based
//! embeddings cluster by label.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::ingest::{component_id, crop_stem, InscriptionType};
use crate::io::write_atomic;

/// `(label, gloss, explanation)` of every fixture component.
pub const COMPONENTS: [(&str, &str, &str); 16] = [
    ("人", "person", "a standing person seen from the side"),
    ("口", "mouth", "an open mouth, also a vessel opening"),
    ("木", "tree", "a tree with branches and roots"),
    ("水", "water", "flowing water with droplets"),
    ("火", "fire", "rising flames"),
    ("日", "sun", "the sun disc with a central dot"),
    ("月", "moon", "a crescent moon"),
    ("手", "hand", "an open hand with fingers"),
    ("目", "eye", "a single eye"),
    ("女", "woman", "a kneeling woman with crossed hands"),
    ("子", "child", "an infant with a large head"),
    ("山", "mountain", "three mountain peaks"),
    ("止", "foot", "a footprint, meaning to go or to stop"),
    ("禾", "grain", "a stalk of ripe grain"),
    ("戈", "dagger-axe", "a dagger-axe weapon on a shaft"),
    ("大", "great", "a person with outstretched arms"),
];

const IMAGE_SIZE: u32 = 256;
const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureSpec {
    pub characters: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            characters: 34,
            seed: 7,
        }
    }
}

/// Paths of a written fixture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixturePaths {
    pub root: PathBuf,
    pub annotations: PathBuf,
    pub vocabulary: PathBuf,
    pub metadata: PathBuf,
    pub explanations: PathBuf,
}

impl FixturePaths {
    pub fn under(root: &Path) -> Self {
        FixturePaths {
            root: root.to_path_buf(),
            annotations: root.join("annotations"),
            vocabulary: root.join("vocabulary.txt"),
            metadata: root.join("metadata.ldjson"),
            explanations: root.join("explanations.json"),
        }
    }
}

/// Crop bytes for occurrence `variant` of `label`.
pub fn crop_bytes(label: &str, variant: usize) -> Vec<u8> {
    let mut b = PNG_MAGIC.to_vec();
    b.extend_from_slice(format!("component-crop:{label}:{}", variant % 2).as_bytes());
    b
}

fn gloss(label: &str) -> &'static str {
    COMPONENTS
        .iter()
        .find(|c| c.0 == label)
        .map(|c| c.1)
        .unwrap_or("sign")
}

fn interpretation(labels: &[&str]) -> String {
    let glosses: Vec<&str> = labels.iter().map(|l| gloss(l)).collect();
    match glosses.as_slice() {
        [one] => format!("Depicts a {one}; the character means {one}."),
        [a, b] => format!("A {a} together with a {b}; the combination expresses an action of the {a} involving the {b}."),
        [a, rest @ ..] => format!(
            "A {a} as the meaning element with {} as the sound element; it names a kind of {a}.",
            rest.join(" and ")
        ),
        [] => String::new(),
    }
}

fn inscription_type(n: usize) -> InscriptionType {
    match n {
        1 => InscriptionType::Pictographic,
        2 => InscriptionType::Ideographic,
        _ => InscriptionType::PhonoSemantic,
    }
}

/// Writes the fixture under `root` and returns its paths.
pub fn write_fixture(root: &Path, spec: FixtureSpec) -> std::io::Result<FixturePaths> {
    let paths = FixturePaths::under(root);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut occurrences: BTreeMap<&str, usize> = BTreeMap::new();
    let mut metadata = Vec::new();

    for i in 0..spec.characters {
        let id = format!("obc{i:04}");
        let n = [1usize, 2, 2, 3][i % 4];
        let mut labels: Vec<&str> = Vec::with_capacity(n);
        while labels.len() < n {
            let l = COMPONENTS[rng.random_range(0..COMPONENTS.len())].0;
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        let mut shapes = Vec::new();
        for (idx, label) in labels.iter().enumerate() {
            let x0 = 10.0 + 80.0 * idx as f64;
            let (y0, y1) = (20.0, 230.0);
            shapes.push(json!({
                "label": label,
                "points": [[x0, y0], [x0 + 70.0, y0], [x0 + 70.0, y1], [x0, y1]],
                "shape_type": "polygon",
            }));
            let occ = occurrences.entry(label).or_default();
            let crop = paths
                .annotations
                .join("crops")
                .join(format!("{}.png", crop_stem(&component_id(&id, idx))));
            write_file(&crop, &crop_bytes(label, *occ))?;
            *occ += 1;
        }
        let annotation = json!({
            "version": "5.2.1",
            "imagePath": format!("images/{id}.png"),
            "imageWidth": IMAGE_SIZE,
            "imageHeight": IMAGE_SIZE,
            "shapes": shapes,
        });
        write_file(
            &paths.annotations.join(format!("{id}.json")),
            serde_json::to_string_pretty(&annotation)?.as_bytes(),
        )?;
        let mut image = PNG_MAGIC.to_vec();
        image.extend_from_slice(format!("character-image:{id}:{}", labels.join("+")).as_bytes());
        write_file(&paths.annotations.join("images").join(format!("{id}.png")), &image)?;

        let mut meta = json!({
            "character_id": id,
            "interpretation": interpretation(&labels),
            "inscription_type": inscription_type(n),
        });
        if i % 7 != 6 {
            meta["modern_form"] = json!(labels.concat());
        }
        if i % 5 == 1 {
            meta["variant_group"] = json!(format!("vg{}", i / 5));
        }
        metadata.push(meta);
    }
    // pair each variant-group character with its predecessor
    for i in 0..metadata.len() {
        if i % 5 == 1 {
            let g = metadata[i]["variant_group"].clone();
            metadata[i - 1]["variant_group"] = g;
        }
    }

    let mut ld = Vec::new();
    for m in &metadata {
        serde_json::to_writer(&mut ld, m)?;
        ld.push(b'\n');
    }
    write_file(&paths.metadata, &ld)?;

    let vocab: String = COMPONENTS.iter().map(|c| format!("{}\n", c.0)).collect();
    write_file(&paths.vocabulary, vocab.as_bytes())?;

    let explanations: BTreeMap<&str, &str> = COMPONENTS.iter().map(|c| (c.0, c.2)).collect();
    write_file(&paths.explanations, serde_json::to_string_pretty(&explanations)?.as_bytes())?;
    Ok(paths)
}

fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_atomic(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_directory, load_metadata, Vocabulary};

    #[test]
    fn fixture_ingests() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(dir.path(), FixtureSpec { characters: 12, seed: 1 }).unwrap();
        let vocab = Vocabulary::load(&p.vocabulary).unwrap();
        let meta = load_metadata(&p.metadata).unwrap();
        let corpus = ingest_directory(&p.annotations, &vocab, &meta).unwrap();
        assert_eq!(corpus.characters.len(), 12);
        assert!(corpus.characters.iter().all(|c| !c.interpretation.is_empty()));
        for c in &corpus.components {
            assert!(Path::new(&c.image_ref).exists(), "{}", c.image_ref);
        }
        assert_eq!(corpus.characters[0].variant_group.as_deref(), Some("vg0"));
        assert_eq!(corpus.characters[1].variant_group.as_deref(), Some("vg0"));
    }

    #[test]
    fn deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_fixture(a.path(), FixtureSpec::default()).unwrap();
        write_fixture(b.path(), FixtureSpec::default()).unwrap();
        let read = |p: &Path| std::fs::read(p.join("metadata.ldjson")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }
}
