//! Whole pipeline without network access: fixture corpus, split, prototype
//! model, graph, batch interpretation with the mock backend, run manifest
//! and the metric report.
//!
//! ```text
//! cargo run --example offline_run
//! ```

use std::sync::Arc;

use obs_core::classifier::build_prototypes;
use obs_core::embedding::{embed_image, EmbeddingProvider};
use obs_core::evaluation::{evaluate_run, EvalConfig};
use obs_core::fixture::{write_fixture, FixtureSpec};
use obs_core::graph::{build_graph, load_explanations};
use obs_core::inference::MockOracleBackend;
use obs_core::ingest::{ingest_directory, load_metadata, manifest_bytes, split_corpus, SplitUnit, Vocabulary};
use obs_core::pipeline::{run_pipeline, write_run, Backends, PipelineInputs, Provenance, RunSettings};
use obs_core::{Mode, StubProvider};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let paths = write_fixture(dir.path(), FixtureSpec::default())?;
    let corpus = ingest_directory(
        &paths.annotations,
        &Vocabulary::load(&paths.vocabulary)?,
        &load_metadata(&paths.metadata)?,
    )?;
    let (train, test) = split_corpus(&corpus, 0.7, 3, SplitUnit::ByCharacter)?;

    let provider = StubProvider::new(64);
    let crops = train
        .components
        .iter()
        .map(|c| Ok((c.label.clone(), embed_image(&provider, &std::fs::read(&c.image_ref)?)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let model = build_prototypes(&crops, provider.name(), false)?;
    let graph = build_graph(&train, &load_explanations(&paths.explanations)?)?;

    for mode in [Mode::Vlm, Mode::MultiAgent] {
        let settings = RunSettings {
            mode,
            language: obs_core::Language::En,
            ..RunSettings::default()
        };
        let backends = Backends::shared(Arc::new(MockOracleBackend::new("offline")));
        let cache = settings.retrieval.new_cache();
        let inputs = PipelineInputs {
            corpus: &test,
            model: &model,
            graph: &graph,
            provider: &provider,
            backends: &backends,
            cache: &cache,
        };
        let output = run_pipeline(&inputs, &settings, &[]);
        let provenance = Provenance {
            manifest_sha256: Some(obs_core::io::sha256_hex(&manifest_bytes(&test))),
            model_sha256: None,
            graph_checksum: graph.checksum(),
            graph_source_split: graph.source_split().to_string(),
            embedding_provider: provider.name().to_string(),
        };
        let out_dir = dir.path().join(format!("run-{mode}"));
        let manifest = write_run(&out_dir, &output, &settings, provenance, test.characters.len())?;
        println!(
            "{mode}: {} results, {} failures, {} tokens, manifest {}",
            manifest.results.len(),
            manifest.failures.len(),
            manifest.token_usage.total(),
            &manifest.manifest_hash[..16]
        );

        let results: Vec<_> = output.outputs.iter().map(|o| o.result.clone()).collect();
        let report = evaluate_run(&results, &test.characters, &EvalConfig::default(), &provider, None)?;
        print!("{}", report.table());
    }
    Ok(())
}
