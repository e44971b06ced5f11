//! Component-grounded interpretation of oracle bone script characters.
//!
//! The pipeline has four stages:
//!
//! 1. [`classifier`]: nearest-prototype identification of pictographic
//!    components from image embeddings ([`embedding`]).
//! 2. [`retrieval`]: a fixed cascade of knowledge-graph lookups
//!    ([`graph`]) behind a semantic-similarity cache.
//! 3. [`inference`]: inscription-type judgement with a reasoning trace.
//! 4. [`inference`]: full interpretation, either with one vision-language
//!    model or with a retriever/reasoner agent pair.
//!
//! [`evaluation`] scores runs with the usual text-generation metrics, an
//! LLM judge and rater-agreement statistics; [`ingest`] turns polygon
//! annotations into corpus manifests; [`pipeline`] composes everything,
//! configured through [`config`]. [`fixture`] writes a small synthetic
//! corpus for trying the pipeline offline.

pub mod classifier;
pub mod config;
pub mod embedding;
pub mod evaluation;
pub mod fixture;
pub mod graph;
pub mod inference;
pub mod ingest;
pub mod io;
pub mod pipeline;
pub mod retrieval;

pub use classifier::{ClassifierModel, RankedEntry, RankedPrediction};
pub use embedding::{EmbeddingProvider, EmbeddingVector, StubProvider};
pub use evaluation::{MetricReport, RatingMatrix};
pub use graph::KnowledgeGraph;
pub use inference::{ChatBackend, InterpretationResult, Language, Mode};
pub use ingest::{CharacterRecord, ComponentRecord, Corpus, InscriptionType};
pub use pipeline::{run_pipeline, RunManifest};
pub use retrieval::{EvidenceBundle, RetrievalConfig, SemanticCache};
