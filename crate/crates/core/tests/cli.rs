use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn obs(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_obs"));
    for var in ["OBS_CHAT_URL", "OBS_RETRIEVER_URL", "OBS_REASONER_URL", "OBS_EMBED_URL", "OBS_LANG", "OBS_MODE"] {
        cmd.env_remove(var);
    }
    cmd.env("OBS_EMBED_DIM", "32").args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = obs(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_string_lossy().into_owned()
}

/// Fixture, manifest, split, model and graph in `dir`.
fn prepare(dir: &Path) {
    ok_json(&["fixture", "--out", &p(dir, "fx"), "--characters", "20"]);
    ok_json(&[
        "ingest", "--annotations", &p(dir, "fx/annotations"), "--vocab", &p(dir, "fx/vocabulary.txt"),
        "--metadata", &p(dir, "fx/metadata.ldjson"), "--out", &p(dir, "all.jsonl"),
    ]);
    ok_json(&[
        "split", "--manifest", &p(dir, "all.jsonl"), "--unit", "by_character", "--seed", "1",
        "--train-out", &p(dir, "train.jsonl"), "--test-out", &p(dir, "test.jsonl"),
    ]);
    ok_json(&["train", "--manifest", &p(dir, "train.jsonl"), "--out", &p(dir, "model.bin")]);
    ok_json(&[
        "build-kg", "--manifest", &p(dir, "train.jsonl"), "--explanations", &p(dir, "fx/explanations.json"),
        "--out", &p(dir, "kg.ldjson"),
    ]);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(obs(&[]).status.code(), Some(2));
    assert_eq!(obs(&["stats", "--bogus"]).status.code(), Some(2));
    assert_eq!(obs(&["agreement", "--ratings", "x.csv", "--stat", "kappa"]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = obs(&["stats", "--manifest", &p(dir.path(), "missing.jsonl")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let cfg = p(dir.path(), "obs.toml");
    std::fs::write(&cfg, "[backend]\napi_key = \"x\"\n").unwrap();
    let out = obs(&["--config", &cfg, "stats", "--manifest", &p(dir.path(), "m.jsonl")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("secret"));
}

#[test]
fn interpret_needs_a_backend_or_mock() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    let image = p(d, "fx/annotations/images/obc0003.png");
    let base = [
        "interpret", "--graph", &p(d, "kg.ldjson"), "--model", &p(d, "model.bin"), "--image", &image,
        "--out", &p(d, "one.json"),
    ];
    let out = obs(&base);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("OBS_CHAT_URL"));

    let mut args = base.to_vec();
    args.extend(["--mock", "--dump-evidence", "--mode", "multi_agent", "--lang", "en"]);
    ok_json(&args);
    let result: Value = serde_json::from_slice(&std::fs::read(p(d, "one.json")).unwrap()).unwrap();
    assert_eq!(result["mode"], "multi_agent");
    assert_eq!(result["language"], "en");
}

#[test]
fn corpus_commands_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    let stats = ok_json(&["stats", "--manifest", &p(d, "all.jsonl")]);
    assert_eq!(stats["character_images"], 20);
    assert!(stats["schema_version"].is_number());

    let acc = ok_json(&["eval-topk", "--model", &p(d, "model.bin"), "--manifest", &p(d, "test.jsonl")]);
    assert!(acc.to_string().contains("acc"), "{acc}");

    let q = ok_json(&["query", "--graph", &p(d, "kg.ldjson"), "--component", "人"]);
    assert!(q.to_string().contains("standing person"), "{q}");
    assert_eq!(obs(&["query", "--graph", &p(d, "kg.ldjson"), "--component", "人", "--modern", "x"]).status.code(), Some(2));

    let v = ok_json(&[
        "variant-search", "--manifest", &p(d, "all.jsonl"), "--image", &p(d, "fx/annotations/images/obc0001.png"), "--k", "2",
    ]);
    assert!(v.to_string().contains("obc0001"), "{v}");
}

#[test]
fn run_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    ok_json(&[
        "run", "--manifest", &p(d, "test.jsonl"), "--model", &p(d, "model.bin"), "--graph", &p(d, "kg.ldjson"),
        "--out", &p(d, "run"), "--mock", "--lang", "en",
    ]);
    let report = ok_json(&[
        "evaluate", "--results", &p(d, "run"), "--gold", &p(d, "test.jsonl"),
        "--metrics", "rouge1,embedding_f1,mover,judge,type_accuracy", "--out", &p(d, "report.json"), "--mock",
    ]);
    assert!(report.to_string().contains("rouge1"), "{report}");
    let saved: Value = serde_json::from_slice(&std::fs::read(p(d, "report.json")).unwrap()).unwrap();
    for key in ["rouge1", "embedding_f1", "mover", "judge", "type_accuracy"] {
        assert!(saved["aggregate"][key].is_number(), "{key} missing from {}", saved["aggregate"]);
    }
}

#[test]
fn agreement_command() {
    let dir = tempfile::tempdir().unwrap();
    let csv = p(dir.path(), "r.csv");
    std::fs::write(&csv, "item,j1,j2,j3,j4\n1,9,2,5,8\n2,6,1,3,2\n3,8,4,6,8\n4,7,1,2,6\n5,10,5,6,9\n6,6,2,4,7\n").unwrap();
    let icc = ok_json(&["agreement", "--ratings", &csv, "--stat", "icc3", "--numeric"]);
    assert_eq!(icc["schema_version"], 1);
    assert!((icc["result"]["value"].as_f64().unwrap() - 0.7148).abs() < 1e-4, "{icc}");
    // values above 5 are not on the Likert scale
    assert_eq!(obs(&["agreement", "--ratings", &csv, "--stat", "alpha"]).status.code(), Some(1));
}
