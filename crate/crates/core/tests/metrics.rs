mod common;

use obs_core::evaluation::{
    embedding_f1_vectors, mover_score, rouge1_f1, tokenize, transport_cost, word_movers_distance, IdfTable,
    MetricError, MoverOptions, TokenSequence, Tokenizer, MAX_TRANSPORT_TOKENS,
};
use obs_core::{EmbeddingVector, StubProvider};
use proptest::prelude::*;

fn seq(words: &[String]) -> TokenSequence {
    TokenSequence::new(words.iter().cloned())
}

fn vecs(raw: &[Vec<f64>]) -> Vec<EmbeddingVector> {
    raw.iter().map(|v| EmbeddingVector::new(v.clone()).unwrap()).collect()
}

/// Earth mover's distance on the real line: the area between the CDFs.
fn wasserstein_1d(x: &[f64], a: &[f64], y: &[f64], b: &[f64]) -> f64 {
    let mut pts: Vec<f64> = x.iter().chain(y).copied().collect();
    pts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let cdf = |at: f64, xs: &[f64], ms: &[f64]| xs.iter().zip(ms).filter(|(p, _)| **p <= at).map(|(_, m)| m).sum::<f64>();
    pts.windows(2)
        .map(|w| (cdf(w[0], x, a) - cdf(w[0], y, b)).abs() * (w[1] - w[0]))
        .sum()
}

fn normalized(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["tree", "person", "fire", "hill", "sun", "moon", "hand", "grain"]).prop_map(String::from)
}

fn unit_vectors(dim: usize, n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), n)
        .prop_filter("non-zero", |vs| vs.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)))
}

proptest! {
    #[test]
    fn rouge_is_symmetric_and_bounded(a in prop::collection::vec(word(), 1..12), b in prop::collection::vec(word(), 1..12)) {
        let (sa, sb) = (seq(&a), seq(&b));
        let ab = rouge1_f1(&sa, &sb).unwrap();
        prop_assert_eq!(ab, rouge1_f1(&sb, &sa).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn rouge_clips_repeated_candidates(a in prop::collection::vec(word(), 1..8), times in 2usize..5) {
        let repeated: Vec<String> = a.iter().cycle().take(a.len() * times).cloned().collect();
        // overlap stays |a|: precision 1/times, recall 1
        let want = 2.0 * a.len() as f64 / (a.len() * times + a.len()) as f64;
        prop_assert_eq!(rouge1_f1(&seq(&repeated), &seq(&a)).unwrap(), want);
    }

    #[test]
    fn embedding_f1_matches_oracle(c in unit_vectors(6, 1..=7), r in unit_vectors(6, 1..=7)) {
        let got = embedding_f1_vectors(&vecs(&c), &vecs(&r)).unwrap();
        prop_assert!((got - common::greedy_f1(&c, &r)).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&got));
        prop_assert!((got - embedding_f1_vectors(&vecs(&r), &vecs(&c)).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn mover_matches_assignment(c in unit_vectors(5, 1..=5), shuffle in any::<u64>()) {
        let n = c.len();
        let r: Vec<Vec<f64>> = (0..n).map(|i| c[(i + shuffle as usize) % n].iter().map(|x| x * 0.5 + 0.1).collect()).collect();
        let mass = vec![1.0 / n as f64; n];
        let got = word_movers_distance(&vecs(&c), &mass, &vecs(&r), &mass).unwrap();
        prop_assert!((got - common::assignment_distance(&c, &r)).abs() <= 1e-9);
    }

    #[test]
    fn transport_matches_line_distance(
        x in prop::collection::vec(-5.0f64..5.0, 1..8),
        y in prop::collection::vec(-5.0f64..5.0, 1..8),
        wa in prop::collection::vec(0.05f64..1.0, 8),
        wb in prop::collection::vec(0.05f64..1.0, 8),
    ) {
        let a = normalized(&wa[..x.len()]);
        let b = normalized(&wb[..y.len()]);
        let cost: Vec<Vec<f64>> = x.iter().map(|p| y.iter().map(|q| (p - q).abs()).collect()).collect();
        let got = transport_cost(&a, &b, &cost).unwrap();
        prop_assert!((got - wasserstein_1d(&x, &a, &y, &b)).abs() <= 1e-9, "{} vs {}", got, wasserstein_1d(&x, &a, &y, &b));
    }

    #[test]
    fn mover_is_symmetric_and_capped(a in prop::collection::vec(word(), 1..10), b in prop::collection::vec(word(), 1..10)) {
        let p = StubProvider::new(32);
        let ab = mover_score(&seq(&a), &seq(&b), &p, MoverOptions::default()).unwrap();
        let ba = mover_score(&seq(&b), &seq(&a), &p, MoverOptions::default()).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ab <= 1.0 + 1e-12);
    }
}

#[test]
fn oversized_transport_is_refused() {
    let p = StubProvider::new(8);
    let long: Vec<String> = (0..=MAX_TRANSPORT_TOKENS).map(|i| format!("w{i}")).collect();
    let short = seq(&["w1".to_string()]);
    let err = mover_score(&seq(&long), &short, &p, MoverOptions::default()).unwrap_err();
    assert!(matches!(err, MetricError::ProblemTooLarge { rows: 65, cols: 1, max: 64 }));
}

#[test]
fn idf_weights() {
    let docs = [
        tokenize("a person and a tree", Tokenizer::Whitespace),
        tokenize("a fire", Tokenizer::Whitespace),
    ];
    let idf = IdfTable::from_documents(&docs);
    assert!((idf.weight("a") - (3.0f64 / 3.0).ln()).abs() < 1e-15);
    assert!((idf.weight("tree") - (3.0f64 / 2.0).ln()).abs() < 1e-15);
    assert!((idf.weight("unseen") - 3.0f64.ln()).abs() < 1e-15);
}

#[test]
fn tokenizers() {
    assert_eq!(tokenize("人 倚，木。", Tokenizer::Character).tokens, ["人", "倚", "木"]);
    assert_eq!(tokenize("The Tree, (old) tree!", Tokenizer::Whitespace).tokens, ["the", "tree", "old", "tree"]);
    let empty = tokenize("。，", Tokenizer::Character);
    assert!(matches!(rouge1_f1(&tokenize("人", Tokenizer::Character), &empty), Err(MetricError::EmptyReference)));
}
