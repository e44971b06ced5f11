mod common;

use std::collections::BTreeSet;

use obs_core::classifier::{RankedEntry, RankedPrediction};
use obs_core::fixture::FixtureSpec;
use obs_core::inference::{
    generate_interpretation_multiagent, generate_interpretation_vlm, infer_relationship, parse_model_response,
    template, ChatRequest, Expected, InferenceError, Language, MockOracleBackend, MultiAgentOptions, Parsed,
    RecordingBackend, ReplayBackend, Role, ScriptedBackend, TemplateError, TemplateName, NO_EVIDENCE_MARKER,
};
use obs_core::retrieval::{EvidenceBundle, EvidenceItem, EvidenceKind, ExternalTool, RetrievalConfig, ToolCall};
use obs_core::{InscriptionType, StubProvider};

const ALL_TEMPLATES: [TemplateName; 6] = [
    TemplateName::TypeInference,
    TemplateName::TypeRetry,
    TemplateName::InterpretationVlm,
    TemplateName::RetrieverPlan,
    TemplateName::Reasoner,
    TemplateName::Judge,
];

fn predicted() -> RankedPrediction {
    RankedPrediction {
        entries: vec![
            RankedEntry {
                label: "人".into(),
                distance: 0.3125,
            },
            RankedEntry {
                label: "木".into(),
                distance: 0.5,
            },
        ],
    }
}

fn bundle(items: usize) -> EvidenceBundle {
    let all = [
        EvidenceItem::new(EvidenceKind::ComponentExplanation, "人", "a standing person"),
        EvidenceItem::new(EvidenceKind::ComponentExplanation, "木", "a tree"),
        EvidenceItem::new(EvidenceKind::ContainingCharacter, "obc0004", "a person resting by a tree"),
    ];
    let items: Vec<EvidenceItem> = all
        .into_iter()
        .take(items)
        .enumerate()
        .map(|(rank, mut i)| {
            i.rank = rank;
            i
        })
        .collect();
    EvidenceBundle {
        character_ref: "obc0004".into(),
        predicted_components: predicted().entries,
        sufficient: items.len() >= 3,
        trace: vec![ToolCall {
            tool: ExternalTool::ComponentExplanation,
            argument: "人".into(),
            issued_at: 0,
        }],
        cached_calls: Vec::new(),
        items,
        min_evidence: 3,
        stage2_ran: false,
    }
}

fn transcript(req: &ChatRequest) -> String {
    let mut out = format!("temperature: {}\n", req.temperature);
    for m in &req.messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        let image = if m.image_b64.is_some() { " +image" } else { "" };
        out.push_str(&format!("--- {role}{image}\n{}\n", m.content));
    }
    out
}

fn check_golden(name: &str, actual: &str) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("OBS_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {name}"));
    assert_eq!(actual, expected, "golden {name} differs; rerun with OBS_UPDATE_GOLDEN=1 to accept");
}

#[test]
fn vlm_prompt_snapshots() {
    for lang in [Language::En, Language::Zh] {
        let backend = ScriptedBackend::new(["INTERPRETATION: a person by a tree"]);
        generate_interpretation_vlm(&backend, b"\x89PNG-bytes", &predicted(), &bundle(3), lang).unwrap();
        check_golden(&format!("interpretation_vlm.{lang}.txt"), &transcript(&backend.requests()[0]));
    }
}

#[test]
fn type_prompt_snapshot() {
    let backend = ScriptedBackend::new(["TYPE: ideographic\nREASON: two signs combine"]);
    infer_relationship(&backend, None, &predicted(), &bundle(2), Language::En).unwrap();
    check_golden("type_inference.en.txt", &transcript(&backend.requests()[0]));
}

#[test]
fn languages_share_slots_but_not_ids() {
    for name in ALL_TEMPLATES {
        let en = template(name, Language::En);
        let zh = template(name, Language::Zh);
        assert_eq!(en.slots(), zh.slots(), "{name:?}");
        if name == TemplateName::Judge {
            assert_eq!(en.template_id(), zh.template_id());
        } else {
            assert_ne!(en.template_id(), zh.template_id(), "{name:?}");
            assert!(en.template_id().contains(".en@") && zh.template_id().contains(".zh@"));
        }
    }
    let ids: BTreeSet<&str> = ALL_TEMPLATES
        .iter()
        .flat_map(|&n| [template(n, Language::En).template_id(), template(n, Language::Zh).template_id()])
        .collect();
    assert_eq!(ids.len(), 11);
}

#[test]
fn output_language_follows_the_request() {
    for (lang, marker) in [(Language::En, "No image is attached."), (Language::Zh, "未附图像。")] {
        let backend = ScriptedBackend::new(["TYPE: pictographic\nREASON: -"]);
        let rel = infer_relationship(&backend, None, &predicted(), &bundle(1), lang).unwrap();
        assert!(backend.requests()[0].last_user().contains(marker));
        assert!(rel.template_ids[0].contains(&format!(".{lang}@")));
    }
}

#[test]
fn render_rejects_missing_and_extra_slots() {
    let t = template(TemplateName::TypeRetry, Language::En);
    assert!(matches!(t.render(&[]), Err(TemplateError::UnfilledSlot { .. })));
    let err = t.render(&[("error", "x".into()), ("bogus", "y".into())]).unwrap_err();
    assert!(matches!(err, TemplateError::UnknownSlot { ref slot, .. } if slot == "bogus"));
}

#[test]
fn one_corrective_retry() {
    let backend = ScriptedBackend::new(["I think it is a picture.", "Type: Pictographic\nReason: it depicts a person"]);
    let rel = infer_relationship(&backend, None, &predicted(), &bundle(3), Language::En).unwrap();
    assert_eq!(rel.inscription_type, InscriptionType::Pictographic);
    assert_eq!(rel.retries, 1);
    let second = &backend.requests()[1];
    let roles: Vec<Role> = second.messages.iter().map(|m| m.role).collect();
    assert_eq!(roles, [Role::System, Role::User, Role::Assistant, Role::User]);
    assert_eq!(second.messages[2].content, "I think it is a picture.");
    assert!(rel.template_ids.iter().any(|id| id.starts_with("type_retry.en@")));

    let stubborn = ScriptedBackend::new(["nope", "still nope"]);
    let err = infer_relationship(&stubborn, None, &predicted(), &bundle(3), Language::En).unwrap_err();
    assert!(matches!(err, InferenceError::UnparseableResponse { .. }));
    assert_eq!(stubborn.requests().len(), 2);
}

#[test]
fn text_only_backend_refuses_images() {
    let backend = ScriptedBackend::new(["INTERPRETATION: x"]).text_only();
    let err = generate_interpretation_vlm(&backend, b"img", &predicted(), &bundle(3), Language::En).unwrap_err();
    assert!(matches!(err, InferenceError::ImageRequiredButUnsupported { .. }));
    assert!(backend.requests().is_empty());
}

#[test]
fn empty_bundle_renders_marker() {
    let backend = ScriptedBackend::new(["INTERPRETATION: unknown"]);
    let r = generate_interpretation_vlm(&backend, b"img", &predicted(), &bundle(0), Language::En).unwrap();
    assert!(backend.requests()[0].last_user().contains(NO_EVIDENCE_MARKER));
    assert!(r.evidence_used.is_empty());
}

#[test]
fn planner_garbage_falls_back_to_fixed_plan() {
    let t = common::trained(FixtureSpec::default(), 3);
    let config = RetrievalConfig::default();
    let provider = StubProvider::new(64);
    let labels: Vec<String> = t.graph.nodes().filter(|n| n.kind == obs_core::graph::NodeKind::Component).map(|n| n.label.clone()).take(2).collect();
    let pred = RankedPrediction {
        entries: labels
            .iter()
            .map(|l| RankedEntry {
                label: l.clone(),
                distance: 0.4,
            })
            .collect(),
    };
    let opts = MultiAgentOptions {
        lang: Language::En,
        retriever_sees_image: false,
    };

    let planner = ScriptedBackend::new(["CALL fetch_everything: 人"]).text_only();
    let reasoner = ScriptedBackend::new(["INTERPRETATION: fine"]);
    let (r, b) = generate_interpretation_multiagent(
        &planner, &reasoner, Some(b"img"), &t.graph, "q", &pred, &config.new_cache(), &provider, &config, opts,
    )
    .unwrap();
    assert!(r.planner_fallback);
    assert_eq!(b.trace.len(), 2 * labels.len());
    assert!(!planner.requests()[0].has_image());

    let call = format!("CALL component_explanation: {}", labels[1]);
    let planner = ScriptedBackend::new([call.as_str()]).text_only();
    let reasoner = ScriptedBackend::new(["INTERPRETATION: fine"]);
    let (r, b) = generate_interpretation_multiagent(
        &planner, &reasoner, Some(b"img"), &t.graph, "q", &pred, &config.new_cache(), &provider, &config, opts,
    )
    .unwrap();
    assert!(!r.planner_fallback);
    assert_eq!(b.trace.len(), 1);
    assert_eq!(b.trace[0].argument, labels[1]);
}

#[test]
fn recording_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let rec = RecordingBackend::new(MockOracleBackend::new("m"));
    let first = generate_interpretation_vlm(&rec, b"img", &predicted(), &bundle(3), Language::Zh).unwrap();
    let path = dir.path().join("cassette.ldjson");
    rec.save(&path).unwrap();
    let replay = ReplayBackend::load(&path).unwrap();
    let again = generate_interpretation_vlm(&replay, b"img", &predicted(), &bundle(3), Language::Zh).unwrap();
    assert_eq!(first.interpretation, again.interpretation);
    assert_eq!(first.token_usage, again.token_usage);
    // a prompt the cassette never saw is an error, not a guess
    assert!(generate_interpretation_vlm(&replay, b"img", &predicted(), &bundle(1), Language::Zh).is_err());
}

#[test]
fn response_grammar_tolerates_formatting() {
    let cases = [
        ("**TYPE**: phono-semantic\nREASON: sound element", InscriptionType::PhonoSemantic),
        ("type：象形\nreason：像人形", InscriptionType::Pictographic),
        ("# Type: Ideographic\n# Reason: combined", InscriptionType::Ideographic),
    ];
    for (raw, want) in cases {
        match parse_model_response(raw, Expected::TypedClassification) {
            Ok(Parsed::TypedClassification { inscription_type, .. }) => assert_eq!(inscription_type, want, "{raw}"),
            other => panic!("{raw}: {other:?}"),
        }
    }
    let err = parse_model_response("REASON: only", Expected::TypedClassification).unwrap_err();
    assert!(err.offset <= "REASON: only".len());
}
