//! Tokenisation, ROUGE-1 and greedy embedding-matching F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::embedding::{cosine_similarity, embed_text, EmbeddingProvider, EmbeddingVector};
use crate::inference::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// One token per non-space, non-punctuation character.
    Character,
    /// Lowercased whitespace words with edge punctuation stripped.
    Whitespace,
}

impl Tokenizer {
    pub fn for_language(lang: Language) -> Self {
        match lang {
            Language::Zh => Tokenizer::Character,
            Language::En => Tokenizer::Whitespace,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tokenizer::Character => "character",
            Tokenizer::Whitespace => "whitespace-lowercase",
        }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x2010..=0x2027 | 0x2030..=0x205E | 0x3000..=0x303F | 0xFF01..=0xFF0F
            | 0xFF1A..=0xFF20 | 0xFF3B..=0xFF40 | 0xFF5B..=0xFF65)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSequence {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn counts(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for t in &self.tokens {
            *m.entry(t.as_str()).or_default() += 1;
        }
        m
    }
}

pub fn tokenize(text: &str, tokenizer: Tokenizer) -> TokenSequence {
    let tokens = match tokenizer {
        Tokenizer::Character => text
            .chars()
            .filter(|c| !c.is_whitespace() && !is_punct(*c))
            .flat_map(char::to_lowercase)
            .map(String::from)
            .collect(),
        Tokenizer::Whitespace => text
            .split_whitespace()
            .map(|w| w.trim_matches(is_punct).to_lowercase())
            .filter(|w| !w.is_empty())
            .collect(),
    };
    TokenSequence { tokens }
}

/// Unigram F1 with candidate counts clipped by reference counts.
pub fn rouge1_f1(candidate: &TokenSequence, reference: &TokenSequence) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let rc = reference.counts();
    let overlap: usize = candidate
        .counts()
        .into_iter()
        .map(|(t, n)| n.min(rc.get(t).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return Ok(0.0);
    }
    // 2PR/(P+R) reduced to one division
    Ok(2.0 * overlap as f64 / (candidate.len() + reference.len()) as f64)
}

/// Embeds each distinct token once.
pub(crate) fn embed_tokens(
    seq: &TokenSequence,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddingVector>, MetricError> {
    let mut memo: BTreeMap<&str, EmbeddingVector> = BTreeMap::new();
    let mut out = Vec::with_capacity(seq.len());
    for t in &seq.tokens {
        if let Some(v) = memo.get(t.as_str()) {
            out.push(v.clone());
            continue;
        }
        let v = embed_text(provider, t)?;
        memo.insert(t, v.clone());
        out.push(v);
    }
    Ok(out)
}

/// Greedy-matching F1 over token embeddings; precision averages each
/// candidate token's best cosine against the reference, recall the reverse.
pub fn embedding_f1_vectors(cand: &[EmbeddingVector], refs: &[EmbeddingVector]) -> Result<f64, MetricError> {
    if cand.is_empty() || refs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sim = vec![vec![0.0; refs.len()]; cand.len()];
    for (i, c) in cand.iter().enumerate() {
        for (j, r) in refs.iter().enumerate() {
            sim[i][j] = cosine_similarity(c, r)?;
        }
    }
    let precision = sim
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / cand.len() as f64;
    let recall = (0..refs.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / refs.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * precision * recall / (precision + recall)).clamp(-1.0, 1.0))
}

pub fn embedding_f1(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    embedding_f1_vectors(&embed_tokens(candidate, provider)?, &embed_tokens(reference, provider)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::StubProvider;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::new(s.split(' ').filter(|t| !t.is_empty()))
    }

    #[test]
    fn tokenizers() {
        assert_eq!(tokenize("甲骨，文 字。", Tokenizer::Character).tokens, ["甲", "骨", "文", "字"]);
        assert_eq!(
            tokenize("A person, kneeling (facing left).", Tokenizer::Whitespace).tokens,
            ["a", "person", "kneeling", "facing", "left"]
        );
    }

    #[test]
    fn rouge_cases() {
        assert_eq!(rouge1_f1(&seq("a b c"), &seq("a b c")).unwrap(), 1.0);
        assert_eq!(rouge1_f1(&seq("x y"), &seq("a b")).unwrap(), 0.0);
        assert!((rouge1_f1(&seq("a b c"), &seq("a b d")).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rouge1_f1(&seq(""), &seq("a")).unwrap(), 0.0);
        assert!(matches!(rouge1_f1(&seq("a"), &seq("")), Err(MetricError::EmptyReference)));
        // clipping: a repeated candidate token only counts up to the reference count
        let f = rouge1_f1(&seq("a a a"), &seq("a b")).unwrap();
        assert!((f - 2.0 * (1.0 / 3.0) * 0.5 / (1.0 / 3.0 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn embedding_f1_identity_and_single() {
        let p = StubProvider::new(16);
        assert!((embedding_f1(&seq("a b c"), &seq("c b a"), &p).unwrap() - 1.0).abs() < 1e-12);
        let a = embed_text(&p, "a").unwrap();
        let b = embed_text(&p, "b").unwrap();
        let f = embedding_f1(&seq("a"), &seq("b"), &p).unwrap();
        assert!((f - cosine_similarity(&a, &b).unwrap()).abs() < 1e-12);
    }
}
