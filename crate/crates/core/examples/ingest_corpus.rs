//! Ingest polygon annotations, print corpus counts and split the corpus.
//!
//! ```text
//! cargo run --example ingest_corpus
//! ```

use std::collections::BTreeSet;

use obs_core::fixture::{write_fixture, FixtureSpec};
use obs_core::ingest::{corpus_stats, ingest_directory, load_metadata, split_corpus, SplitUnit, Vocabulary};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let paths = write_fixture(dir.path(), FixtureSpec::default())?;

    let vocab = Vocabulary::load(&paths.vocabulary)?;
    let metadata = load_metadata(&paths.metadata)?;
    let corpus = ingest_directory(&paths.annotations, &vocab, &metadata)?;
    println!("corpus: {}", serde_json::to_string(&corpus_stats(&corpus))?);

    let (train, test) = split_corpus(&corpus, 0.7, 42, SplitUnit::ByComponentClass)?;
    println!(
        "component split: {} train / {} test crops",
        train.components.len(),
        test.components.len()
    );

    let (train, test) = split_corpus(&corpus, 0.7, 42, SplitUnit::ByCharacter)?;
    let train_ids: BTreeSet<_> = train.characters.iter().map(|c| &c.character_id).collect();
    let overlap = test.characters.iter().filter(|c| train_ids.contains(&c.character_id)).count();
    println!(
        "character split: {} train / {} test characters, {overlap} shared",
        train.characters.len(),
        test.characters.len()
    );
    Ok(())
}
