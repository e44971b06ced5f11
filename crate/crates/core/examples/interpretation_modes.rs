//! Single-call and two-agent interpretation against offline backends, plus
//! recording a session and replaying it byte for byte.
//!
//! ```text
//! cargo run --example interpretation_modes
//! ```

use obs_core::classifier::{RankedEntry, RankedPrediction};
use obs_core::fixture::{write_fixture, FixtureSpec};
use obs_core::graph::{build_graph, load_explanations};
use obs_core::inference::{
    generate_interpretation_multiagent, generate_interpretation_vlm, infer_relationship, Language,
    MockOracleBackend, MultiAgentOptions, RecordingBackend,
};
use obs_core::ingest::{ingest_directory, load_metadata, Vocabulary};
use obs_core::retrieval::{retrieve_evidence, RetrievalConfig};
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
    let character = &corpus.characters[2];
    let image = std::fs::read(&character.image_ref)?;
    let predicted = RankedPrediction {
        entries: character
            .component_labels
            .iter()
            .enumerate()
            .map(|(i, l)| RankedEntry {
                label: l.clone(),
                distance: 0.3 + 0.1 * i as f64,
            })
            .collect(),
    };
    let config = RetrievalConfig::default();
    let provider = StubProvider::new(64);

    let vlm = RecordingBackend::new(MockOracleBackend::new("vlm"));
    let bundle = retrieve_evidence(&graph, &character.character_id, &predicted, &config.new_cache(), &provider, &config)?;
    let mut single = generate_interpretation_vlm(&vlm, &image, &predicted, &bundle, Language::En)?;
    single.attach_relationship(&infer_relationship(&vlm, Some(&image), &predicted, &bundle, Language::En)?);
    println!("vlm: {:?} / {}", single.inscription_type, single.interpretation);
    println!("vlm tokens: {}", single.token_usage.total());

    let retriever = MockOracleBackend::new("retriever").text_only();
    let reasoner = MockOracleBackend::new("reasoner");
    let (multi, multi_bundle) = generate_interpretation_multiagent(
        &retriever,
        &reasoner,
        Some(&image),
        &graph,
        &character.character_id,
        &predicted,
        &config.new_cache(),
        &provider,
        &config,
        MultiAgentOptions {
            lang: Language::En,
            retriever_sees_image: false,
        },
    )?;
    println!("multi-agent: {}", multi.interpretation);
    for (role, usage) in &multi.agent_usage {
        println!("  {role}: {} tokens", usage.total());
    }
    println!("  planned calls: {}, fallback: {}", multi_bundle.trace.len(), multi.planner_fallback);

    // the cassette answers the same prompts without the original backend
    let cassette = dir.path().join("session.ldjson");
    vlm.save(&cassette)?;
    let replay = obs_core::inference::ReplayBackend::load(&cassette)?;
    let again = generate_interpretation_vlm(&replay, &image, &predicted, &bundle, Language::En)?;
    println!("replayed {} exchanges, identical: {}", replay.len(), again.interpretation == single.interpretation);
    Ok(())
}
