//! Metrics for classifier output, generated interpretations and human
//! rating studies.
//!
//! Text metrics compare a candidate interpretation with the expert
//! reference after tokenisation (per character for Chinese, lowercased
//! words for English). Agreement statistics take an items-by-raters
//! [`RatingMatrix`].

mod agreement;
mod judge;
mod report;
mod text;
mod transport;

pub use agreement::{
    coincidences, icc3, krippendorff_alpha, AlphaLevel, Coincidences, Icc3, RatingMatrix,
};
pub use judge::{judge_request, judge_template_id, llm_judge, JudgeScore};
pub use report::{
    classification_accuracy, evaluate_run, parse_metrics, topk_accuracy, EvalConfig, ItemFailure, ItemScores,
    Metric, MetricReport, ReportMetadata, REPORT_SCHEMA_VERSION,
};
pub use text::{embedding_f1, embedding_f1_vectors, rouge1_f1, tokenize, TokenSequence, Tokenizer};
pub use transport::{
    mover_score, transport_cost, word_movers_distance, IdfTable, MoverOptions, MAX_TRANSPORT_TOKENS,
};

use crate::embedding::EmbeddingError;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("transport problem {rows}x{cols} exceeds the exact-solver limit of {max}")]
    ProblemTooLarge { rows: usize, cols: usize, max: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("rating matrix has missing values")]
    IncompleteMatrix,
    #[error("ratings have no variance")]
    DegenerateVariance,
    #[error("no item has two or more ratings")]
    NoPairableValues,
    #[error("invalid rating: {0}")]
    InvalidRating(String),
    #[error("need at least 2 raters, got {0}")]
    TooFewRaters(usize),
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("judge failed: {0}")]
    Judge(String),
}
