//! Build the component knowledge graph from the training side and query it.
//!
//! ```text
//! cargo run --example knowledge_graph
//! ```

use obs_core::fixture::{write_fixture, FixtureSpec};
use obs_core::graph::{build_graph, load_explanations, KnowledgeGraph};
use obs_core::ingest::{ingest_directory, load_metadata, split_corpus, SplitUnit, Vocabulary};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let paths = write_fixture(dir.path(), FixtureSpec::default())?;
    let corpus = ingest_directory(
        &paths.annotations,
        &Vocabulary::load(&paths.vocabulary)?,
        &load_metadata(&paths.metadata)?,
    )?;
    let (train, test) = split_corpus(&corpus, 0.7, 5, SplitUnit::ByCharacter)?;
    let graph = build_graph(&train, &load_explanations(&paths.explanations)?)?;
    println!("{} nodes, {} edges", graph.node_count(), graph.edge_count());

    let held_out = test.characters.iter().filter(|c| graph.has_character(&c.character_id)).count();
    println!("test characters present in the graph: {held_out}");

    let label = "人";
    println!("{label}: {}", graph.component_explanation(label)?.explanation);
    for hit in graph.characters_by_component(label)? {
        println!("  in {} with {:?}: {}", hit.character_id, hit.co_components, hit.interpretation);
    }
    let first = &train.characters[0].character_id;
    println!("{first}: variants {:?}, modern form {:?}", graph.variant_lookup(first)?, graph.modern_mapping(first)?);

    let file = dir.path().join("graph.ldjson");
    graph.save(&file)?;
    let reloaded = KnowledgeGraph::load(&file)?;
    println!("round trip equal: {}, checksum {}", reloaded == graph, reloaded.checksum());
    Ok(())
}
