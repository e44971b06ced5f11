use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use obs_core::classifier::{build_prototypes, classify_topk, evaluate_topk, variant_search, ClassifierModel};
use obs_core::config::PipelineConfig;
use obs_core::embedding::{embed_image, EmbeddingProvider, EmbeddingVector};
use obs_core::evaluation::{evaluate_run, icc3, krippendorff_alpha, parse_metrics, AlphaLevel, EvalConfig, RatingMatrix};
use obs_core::fixture::{write_fixture, FixtureSpec};
use obs_core::graph::{build_graph, load_explanations, KnowledgeGraph};
use obs_core::inference::{AgentRole, Language, Mode};
use obs_core::ingest::{corpus_stats, ingest_directory, load_manifest, load_metadata, manifest_bytes, split_corpus};
use obs_core::ingest::{CharacterRecord, Corpus, SplitUnit, Vocabulary};
use obs_core::io::{sha256_file, write_atomic};
use obs_core::pipeline::{load_results, run_pipeline, write_run, Backends, PipelineInputs, Provenance, RunSettings};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "obs", version, about = "Component-grounded oracle bone script interpretation")]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic demo corpus.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 34)]
        characters: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Parse annotation files into a corpus manifest.
    Ingest {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus counts.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Deterministic train/test split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "by_component_class")]
        unit: SplitUnit,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Build component prototypes from a manifest's component crops.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// L2-normalise embeddings before averaging.
        #[arg(long)]
        normalize: bool,
    },
    /// Rank component labels for one image.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// ACC@k over a manifest's component crops.
    EvalTopk {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        ks: Vec<usize>,
    },
    /// Nearest indexed characters for a query image.
    VariantSearch {
        /// Manifest whose character images form the index.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Build the knowledge graph from a training manifest.
    BuildKg {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        explanations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Look something up in a knowledge graph.
    Query {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, group = "q")]
        component: Option<String>,
        #[arg(long, group = "q")]
        characters_by: Option<String>,
        #[arg(long, group = "q")]
        variants: Option<String>,
        #[arg(long, group = "q")]
        modern: Option<String>,
    },
    /// Interpret one character image.
    Interpret {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        lang: Option<Language>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the evidence bundle next to the result.
        #[arg(long)]
        dump_evidence: bool,
        /// Use the offline rule-based backends.
        #[arg(long)]
        mock: bool,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Run the whole pipeline over a manifest.
    Run {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        lang: Option<Language>,
        #[arg(long, value_delimiter = ',')]
        characters: Vec<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        mock: bool,
    },
    /// Score a run directory against gold records.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        metrics: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mover_idf: bool,
        /// Judge with the offline rule-based backend.
        #[arg(long)]
        mock: bool,
    },
    /// Inter-rater agreement over an items-by-raters CSV.
    Agreement {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        stat: Stat,
        #[arg(long, default_value = "ordinal")]
        level: AlphaLevel,
        /// Accept any numeric ratings instead of the 1-5 scale.
        #[arg(long)]
        numeric: bool,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Stat {
    Icc3,
    Alpha,
}

fn emit(mut v: Value) -> Result<()> {
    if let Value::Object(m) = &mut v {
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn embed_crops(corpus: &Corpus, provider: &dyn EmbeddingProvider) -> Result<Vec<(String, EmbeddingVector)>> {
    corpus
        .components
        .iter()
        .map(|c| {
            let bytes = read(Path::new(&c.image_ref))?;
            Ok((c.label.clone(), embed_image(provider, &bytes)?))
        })
        .collect()
}

fn load_model(path: &Path, provider: &dyn EmbeddingProvider) -> Result<ClassifierModel> {
    ClassifierModel::load_for_provider(path, provider.name()).with_context(|| format!("loading {}", path.display()))
}

fn character_from_image(image: &Path) -> CharacterRecord {
    let id = image.file_stem().and_then(|s| s.to_str()).unwrap_or("query").to_string();
    CharacterRecord {
        character_id: id,
        image_ref: image.to_string_lossy().into_owned(),
        component_labels: Vec::new(),
        interpretation: String::new(),
        inscription_type: None,
        modern_form: None,
        variant_group: None,
    }
}

fn settings_from(cfg: &PipelineConfig) -> RunSettings {
    RunSettings {
        mode: cfg.mode,
        language: cfg.language,
        top_k: cfg.top_k,
        retrieval: cfg.retrieval.clone(),
        workers: cfg.workers,
        retriever_sees_image: cfg.retriever_sees_image,
    }
}

fn backends(cfg: &PipelineConfig) -> Result<Backends> {
    Ok(Backends {
        single: cfg.chat_backend(AgentRole::Single)?,
        retriever: cfg.chat_backend(AgentRole::Retriever)?,
        reasoner: cfg.chat_backend(AgentRole::Reasoner)?,
    })
}

fn provenance(manifest: Option<&Path>, model: &Path, graph: &KnowledgeGraph, provider: &str) -> Result<Provenance> {
    Ok(Provenance {
        manifest_sha256: manifest.map(sha256_file).transpose()?,
        model_sha256: Some(sha256_file(model)?),
        graph_checksum: graph.checksum(),
        graph_source_split: graph.source_split().to_string(),
        embedding_provider: provider.to_string(),
    })
}

fn required(v: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    v.with_context(|| format!("{flag} is required (flag or config paths)"))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Fixture { out, characters, seed } => {
            let p = write_fixture(&out, FixtureSpec { characters, seed })?;
            emit(json!({
                "annotations": p.annotations,
                "vocabulary": p.vocabulary,
                "metadata": p.metadata,
                "explanations": p.explanations,
            }))
        }
        Command::Ingest {
            annotations,
            vocab,
            metadata,
            out,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let meta = match metadata {
                Some(p) => load_metadata(&p)?,
                None => BTreeMap::new(),
            };
            let corpus = ingest_directory(&annotations, &vocab, &meta)?;
            write_atomic(&out, &manifest_bytes(&corpus))?;
            emit(json!({ "manifest": out, "stats": corpus_stats(&corpus) }))
        }
        Command::Stats { manifest } => {
            let corpus = load_manifest(&manifest)?;
            emit(serde_json::to_value(corpus_stats(&corpus))?)
        }
        Command::Split {
            manifest,
            ratio,
            seed,
            unit,
            train_out,
            test_out,
        } => {
            let corpus = load_manifest(&manifest)?;
            let (train, test) = split_corpus(&corpus, ratio, seed, unit)?;
            let (tb, sb) = (manifest_bytes(&train), manifest_bytes(&test));
            write_atomic(&train_out, &tb)?;
            write_atomic(&test_out, &sb)?;
            emit(json!({
                "train": { "path": train_out, "sha256": obs_core::io::sha256_hex(&tb), "stats": corpus_stats(&train) },
                "test": { "path": test_out, "sha256": obs_core::io::sha256_hex(&sb), "stats": corpus_stats(&test) },
            }))
        }
        Command::Train {
            manifest,
            out,
            normalize,
        } => {
            let provider = cfg.embedding_provider();
            let corpus = load_manifest(&manifest)?;
            let train = embed_crops(&corpus, provider.as_ref())?;
            let model = build_prototypes(&train, provider.name(), normalize)?;
            model.save(&out)?;
            emit(json!({
                "model": out,
                "classes": model.num_classes(),
                "dim": model.dim,
                "provider": model.provider_name,
                "sha256": sha256_file(&out)?,
            }))
        }
        Command::Classify { model, image, k } => {
            let provider = cfg.embedding_provider();
            let model = load_model(&model, provider.as_ref())?;
            let emb = embed_image(provider.as_ref(), &read(&image)?)?;
            emit(json!({ "prediction": classify_topk(&model, &emb, k)? }))
        }
        Command::EvalTopk { model, manifest, ks } => {
            let provider = cfg.embedding_provider();
            let model = load_model(&model, provider.as_ref())?;
            let test = embed_crops(&load_manifest(&manifest)?, provider.as_ref())?;
            let acc = evaluate_topk(&model, &test, &ks)?;
            let acc: BTreeMap<String, f64> = acc.into_iter().map(|(k, v)| (format!("acc@{k}"), v)).collect();
            emit(json!({ "queries": test.len(), "accuracy": acc, "provider": provider.name() }))
        }
        Command::VariantSearch { manifest, image, k } => {
            let provider = cfg.embedding_provider();
            let corpus = load_manifest(&manifest)?;
            let index = corpus
                .characters
                .iter()
                .map(|c| Ok((c.character_id.clone(), embed_image(provider.as_ref(), &read(Path::new(&c.image_ref))?)?)))
                .collect::<Result<Vec<_>>>()?;
            let q = embed_image(provider.as_ref(), &read(&image)?)?;
            let hits: Vec<Value> = variant_search(&index, &q, k)?
                .into_iter()
                .map(|(id, d)| json!({ "character_id": id, "distance": d }))
                .collect();
            emit(json!({ "neighbours": hits }))
        }
        Command::BuildKg {
            manifest,
            explanations,
            out,
        } => {
            let train = load_manifest(&manifest)?;
            let ex = match explanations {
                Some(p) => load_explanations(&p)?,
                None => BTreeMap::new(),
            };
            let graph = build_graph(&train, &ex)?;
            graph.save(&out)?;
            emit(json!({
                "graph": out,
                "nodes": graph.node_count(),
                "edges": graph.edge_count(),
                "checksum": graph.checksum(),
                "source_split": graph.source_split(),
            }))
        }
        Command::Query {
            graph,
            component,
            characters_by,
            variants,
            modern,
        } => {
            let g = KnowledgeGraph::load(&graph)?;
            if let Some(l) = component {
                emit(json!({ "component": l, "explanation": g.component_explanation(&l)? }))
            } else if let Some(l) = characters_by {
                emit(json!({ "component": l, "characters": g.characters_by_component(&l)? }))
            } else if let Some(c) = variants {
                emit(json!({ "character": c, "variants": g.variant_lookup(&c)? }))
            } else if let Some(c) = modern {
                emit(json!({ "character": c, "modern_form": g.modern_mapping(&c)? }))
            } else {
                emit(json!({ "nodes": g.node_count(), "edges": g.edge_count(), "checksum": g.checksum() }))
            }
        }
        Command::Interpret {
            graph,
            model,
            image,
            mode,
            lang,
            out,
            dump_evidence,
            mock,
            top_k,
        } => {
            cfg.backend.mock |= mock;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(l) = lang {
                cfg.language = l;
            }
            if let Some(k) = top_k {
                cfg.top_k = k;
            }
            cfg.validate()?;
            let backends = backends(&cfg)?;
            let provider = cfg.embedding_provider();
            let classifier = load_model(&model, provider.as_ref())?;
            let g = KnowledgeGraph::load(&graph)?;
            let record = character_from_image(&image);
            let corpus = Corpus {
                characters: vec![record.clone()],
                ..Corpus::default()
            };
            let cache = cfg.retrieval.new_cache();
            let inputs = PipelineInputs {
                corpus: &corpus,
                model: &classifier,
                graph: &g,
                provider: provider.as_ref(),
                backends: &backends,
                cache: &cache,
            };
            let settings = settings_from(&cfg);
            let output = run_pipeline(&inputs, &settings, std::slice::from_ref(&record.character_id));
            if let Some(f) = output.failures.first() {
                bail!("{:?} failed for {}: {}", f.stage, f.character_ref, f.error);
            }
            let o = &output.outputs[0];
            write_json(&out, &o.result)?;
            let mut summary = json!({ "result": out, "character_ref": o.result.character_ref });
            if dump_evidence {
                let ev = out.with_extension("evidence.json");
                write_json(&ev, &o.bundle)?;
                summary["evidence"] = json!(ev);
            }
            emit(summary)
        }
        Command::Run {
            manifest,
            model,
            graph,
            out,
            mode,
            lang,
            characters,
            workers,
            mock,
        } => {
            cfg.backend.mock |= mock;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(l) = lang {
                cfg.language = l;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let manifest = required(manifest.or(cfg.paths.manifest.clone()), "--manifest")?;
            let model = required(model.or(cfg.paths.model.clone()), "--model")?;
            let graph = required(graph.or(cfg.paths.graph.clone()), "--graph")?;
            let out = required(out.or(cfg.paths.out_dir.clone()), "--out")?;
            cfg.validate()?;
            let backends = backends(&cfg)?;
            let provider = cfg.embedding_provider();
            let corpus = load_manifest(&manifest)?;
            let classifier = load_model(&model, provider.as_ref())?;
            let g = KnowledgeGraph::load(&graph)?;
            let cache = cfg.retrieval.new_cache();
            let inputs = PipelineInputs {
                corpus: &corpus,
                model: &classifier,
                graph: &g,
                provider: provider.as_ref(),
                backends: &backends,
                cache: &cache,
            };
            let settings = settings_from(&cfg);
            let output = run_pipeline(&inputs, &settings, &characters);
            let requested = if characters.is_empty() {
                corpus.characters.len()
            } else {
                characters.len()
            };
            let prov = provenance(Some(&manifest), &model, &g, provider.name())?;
            let m = write_run(&out, &output, &settings, prov, requested)?;
            for f in &m.failures {
                eprintln!("warning: {} failed at {:?}: {}", f.character_ref, f.stage, f.error);
            }
            emit(json!({
                "out": out,
                "results": m.results.len(),
                "failures": m.failures.len(),
                "manifest_hash": m.manifest_hash,
                "token_usage": m.token_usage,
            }))
        }
        Command::Evaluate {
            results,
            gold,
            metrics,
            out,
            mover_idf,
            mock,
        } => {
            cfg.backend.mock |= mock;
            let metrics = match metrics {
                Some(list) => parse_metrics(&list).map_err(anyhow::Error::msg)?,
                None => cfg.metrics.clone(),
            };
            let needs_judge = metrics.contains(&obs_core::evaluation::Metric::Judge);
            let judge = if needs_judge {
                Some(cfg.chat_backend(AgentRole::Judge)?)
            } else {
                None
            };
            let provider = cfg.embedding_provider();
            let gold_corpus = load_manifest(&gold)?;
            let split_hash = Some(sha256_file(&gold)?);
            let run = load_results(&results).with_context(|| format!("reading results from {}", results.display()))?;
            let config = EvalConfig {
                metrics,
                mover_idf,
                split_hash,
            };
            let report = evaluate_run(&run, &gold_corpus.characters, &config, provider.as_ref(), judge.as_deref())?;
            write_json(&out, &report)?;
            eprint!("{}", report.table());
            emit(json!({ "report": out, "aggregate": report.aggregate, "items": report.per_item.len() }))
        }
        Command::Agreement {
            ratings,
            stat,
            level,
            numeric,
        } => {
            let file = std::fs::File::open(&ratings).with_context(|| format!("opening {}", ratings.display()))?;
            let m = RatingMatrix::from_csv(file, !numeric)?;
            match stat {
                Stat::Icc3 => {
                    let r = icc3(&m)?;
                    if r.degenerate {
                        eprintln!("warning: ratings have no variance; ICC reported as 0");
                    }
                    emit(json!({ "stat": "icc3", "items": m.items(), "raters": m.raters(), "result": r }))
                }
                Stat::Alpha => {
                    let a = krippendorff_alpha(&m, level)?;
                    emit(json!({ "stat": "krippendorff_alpha", "level": level, "items": m.items(), "raters": m.raters(), "alpha": a }))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
