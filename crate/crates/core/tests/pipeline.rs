mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use obs_core::fixture::FixtureSpec;
use obs_core::inference::{AgentRole, BackendError, TokenUsage, ChatBackend, ChatRequest, ChatResponse, MockOracleBackend};
use obs_core::pipeline::{load_results, run_pipeline, write_run, Backends, PipelineInputs, Provenance, RunOutput, RunSettings, Stage};
use obs_core::{Language, Mode};

struct Counting {
    inner: MockOracleBackend,
    calls: AtomicUsize,
}

impl Counting {
    fn new(name: &str) -> Arc<Self> {
        Arc::new(Counting {
            inner: MockOracleBackend::new(name),
            calls: AtomicUsize::new(0),
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for Counting {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

fn run(t: &common::Trained, backends: &Backends, settings: &RunSettings) -> RunOutput {
    let cache = settings.retrieval.new_cache();
    let inputs = PipelineInputs {
        corpus: &t.test,
        model: &t.model,
        graph: &t.graph,
        provider: &t.provider,
        backends,
        cache: &cache,
    };
    run_pipeline(&inputs, settings, &[])
}

#[test]
fn missing_image_is_isolated() {
    let mut t = common::trained(FixtureSpec { characters: 10, seed: 4 }, 1);
    t.test.characters.truncate(3);
    let victim = t.test.characters[1].clone();
    std::fs::remove_file(&victim.image_ref).unwrap();
    let backends = Backends::shared(Arc::new(MockOracleBackend::new("m")));
    let out = run(&t, &backends, &RunSettings::default());
    assert_eq!(out.outputs.len(), 2);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].character_ref, victim.character_id);
    assert_eq!(out.failures[0].stage, Stage::LoadImage);
}

#[test]
fn unknown_character_fails_at_lookup() {
    let t = common::trained(FixtureSpec { characters: 10, seed: 4 }, 1);
    let backends = Backends::shared(Arc::new(MockOracleBackend::new("m")));
    let cache = obs_core::RetrievalConfig::default().new_cache();
    let inputs = PipelineInputs {
        corpus: &t.test,
        model: &t.model,
        graph: &t.graph,
        provider: &t.provider,
        backends: &backends,
        cache: &cache,
    };
    let ids = vec![t.test.characters[0].character_id.clone(), "nope".to_string()];
    let out = run_pipeline(&inputs, &RunSettings::default(), &ids);
    assert_eq!(out.outputs.len(), 1);
    assert_eq!(out.failures[0].stage, Stage::Lookup);
}

#[test]
fn modes_call_only_their_backends() {
    let t = common::trained(FixtureSpec::default(), 3);
    let n = t.test.characters.len();
    for mode in [Mode::Vlm, Mode::MultiAgent] {
        let (single, retriever, reasoner) = (Counting::new("s"), Counting::new("r"), Counting::new("q"));
        let backends = Backends {
            single: single.clone(),
            retriever: retriever.clone(),
            reasoner: reasoner.clone(),
        };
        let settings = RunSettings {
            mode,
            ..RunSettings::default()
        };
        let out = run(&t, &backends, &settings);
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        let counts = (single.calls(), retriever.calls(), reasoner.calls());
        match mode {
            // interpretation plus type inference
            Mode::Vlm => assert_eq!(counts, (2 * n, 0, 0)),
            Mode::MultiAgent => assert_eq!(counts, (n, n, n)),
        }
        for o in &out.outputs {
            let r = &o.result;
            let parts = r.agent_usage.values().fold(TokenUsage::default(), |a, &u| a + u);
            assert_eq!(parts, r.token_usage);
            assert!(r.inscription_type.is_some());
            if mode == Mode::MultiAgent {
                assert!(r.agent_usage.contains_key(&AgentRole::Retriever));
                assert!(r.agent_usage.contains_key(&AgentRole::Reasoner));
            }
        }
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let t = common::trained(FixtureSpec::default(), 5);
    let backends = Backends::shared(Arc::new(MockOracleBackend::new("m")));
    let one = run(&t, &backends, &RunSettings { workers: 1, ..RunSettings::default() });
    let many = run(&t, &backends, &RunSettings { workers: 8, ..RunSettings::default() });
    assert_eq!(one, many);
}

#[test]
fn run_directory_round_trip() {
    let t = common::trained(FixtureSpec::default(), 2);
    let backends = Backends::shared(Arc::new(MockOracleBackend::new("m")));
    let settings = RunSettings {
        language: Language::En,
        ..RunSettings::default()
    };
    let out = run(&t, &backends, &settings);
    let dir = t.dir.path().join("run");
    let provenance = Provenance {
        graph_checksum: t.graph.checksum(),
        graph_source_split: t.graph.source_split().to_string(),
        embedding_provider: "stub".into(),
        ..Provenance::default()
    };
    let manifest = write_run(&dir, &out, &settings, provenance, t.test.characters.len()).unwrap();
    assert!(manifest.verify());
    let mut tampered = manifest.clone();
    tampered.characters_requested += 1;
    assert!(!tampered.verify());

    let loaded = load_results(&dir).unwrap();
    let mut expected: Vec<_> = out.outputs.iter().map(|o| o.result.clone()).collect();
    expected.sort_by(|a, b| a.character_ref.cmp(&b.character_ref));
    assert_eq!(loaded, expected);
    for entry in &manifest.results {
        let bytes = std::fs::read(dir.join(&entry.path)).unwrap();
        assert_eq!(obs_core::io::sha256_hex(&bytes), entry.sha256);
    }
}

#[test]
fn evidence_calls_cover_the_plan() {
    let t = common::trained(FixtureSpec::default(), 6);
    let backends = Backends::shared(Arc::new(MockOracleBackend::new("m")));
    let out = run(&t, &backends, &RunSettings::default());
    for o in &out.outputs {
        let mut seq: Vec<u64> = o
            .bundle
            .trace
            .iter()
            .chain(&o.bundle.cached_calls)
            .map(|c| c.issued_at)
            .collect();
        seq.sort_unstable();
        assert_eq!(seq, (0..seq.len() as u64).collect::<Vec<_>>());
        assert!(!seq.is_empty());
    }
    // the run shares one cache, so later characters reuse earlier lookups
    assert!(out.outputs.iter().any(|o| !o.bundle.cached_calls.is_empty()));
}
