//! Build component prototypes, classify crops and search for variants.
//!
//! ```text
//! cargo run --example prototype_classifier
//! ```

use obs_core::classifier::{build_prototypes, classify_topk, evaluate_topk, variant_search};
use obs_core::embedding::{embed_image, EmbeddingProvider, StubProvider};
use obs_core::fixture::{write_fixture, FixtureSpec};
use obs_core::ingest::{ingest_directory, load_metadata, split_corpus, Corpus, SplitUnit, Vocabulary};
use obs_core::EmbeddingVector;

fn embed_crops(corpus: &Corpus, provider: &dyn EmbeddingProvider) -> anyhow::Result<Vec<(String, EmbeddingVector)>> {
    corpus
        .components
        .iter()
        .map(|c| Ok((c.label.clone(), embed_image(provider, &std::fs::read(&c.image_ref)?)?)))
        .collect()
}

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let paths = write_fixture(dir.path(), FixtureSpec { characters: 80, seed: 11 })?;
    let corpus = ingest_directory(
        &paths.annotations,
        &Vocabulary::load(&paths.vocabulary)?,
        &load_metadata(&paths.metadata)?,
    )?;
    let (train, test) = split_corpus(&corpus, 0.7, 1, SplitUnit::ByComponentClass)?;

    let provider = StubProvider::new(128);
    let model = build_prototypes(&embed_crops(&train, &provider)?, provider.name(), false)?;
    println!("{} prototypes of dimension {}", model.num_classes(), model.dim);

    let test_set = embed_crops(&test, &provider)?;
    for (k, acc) in evaluate_topk(&model, &test_set, &[1, 3, 5])? {
        println!("ACC@{k} = {acc:.4}");
    }

    let (gold, query) = &test_set[0];
    let ranked = classify_topk(&model, query, 3)?;
    println!("gold {gold}: ranked {:?}", ranked.labels().collect::<Vec<_>>());

    // variant search ranks whole-character images by raw distance
    let index = corpus
        .characters
        .iter()
        .map(|c| Ok((c.character_id.clone(), embed_image(&provider, &std::fs::read(&c.image_ref)?)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let probe = &index[3].1;
    for (id, d) in variant_search(&index, probe, 3)? {
        println!("neighbour {id} at {d:.4}");
    }
    Ok(())
}
