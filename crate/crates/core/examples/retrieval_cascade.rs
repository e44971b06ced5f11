//! Retrieve evidence for predicted components and watch the cache work.
//!
//! ```text
//! cargo run --example retrieval_cascade
//! ```

use obs_core::classifier::{RankedEntry, RankedPrediction};
use obs_core::fixture::{write_fixture, FixtureSpec};
use obs_core::graph::{build_graph, load_explanations};
use obs_core::ingest::{ingest_directory, load_metadata, Vocabulary};
use obs_core::retrieval::{retrieve_evidence, CountingTools, RetrievalConfig};
use obs_core::StubProvider;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let paths = write_fixture(dir.path(), FixtureSpec::default())?;
    let corpus = ingest_directory(
        &paths.annotations,
        &Vocabulary::load(&paths.vocabulary)?,
        &load_metadata(&paths.metadata)?,
    )?;
    let graph = build_graph(&corpus, &load_explanations(&paths.explanations)?)?;

    let predicted = RankedPrediction {
        entries: [("人", 0.41), ("木", 0.58), ("口", 0.93)]
            .into_iter()
            .map(|(label, distance)| RankedEntry {
                label: label.into(),
                distance,
            })
            .collect(),
    };
    let config = RetrievalConfig::default();
    let cache = config.new_cache();
    let provider = StubProvider::new(64);
    let tools = CountingTools::new(&graph);

    let bundle = retrieve_evidence(&tools, "query-1", &predicted, &cache, &provider, &config)?;
    for item in &bundle.items {
        println!("[{}] {:?} {:?} {}: {}", item.rank, item.source, item.kind, item.subject, item.content);
    }
    println!("calls: {}, sufficient: {}, stage two: {}", bundle.trace.len(), bundle.sufficient, bundle.stage2_ran);

    // same components again: every tool call is answered from the cache
    let again = retrieve_evidence(&tools, "query-2", &predicted, &cache, &provider, &config)?;
    println!(
        "external calls {}, cache {:?}, second bundle items {}",
        tools.external_calls(),
        cache.stats(),
        again.items.len()
    );
    Ok(())
}
