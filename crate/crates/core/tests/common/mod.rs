//! Independent reference implementations and fixture helpers shared by the
//! integration tests. Nothing here calls the library code it checks.

#![allow(dead_code)]

use std::path::Path;

use obs_core::fixture::{write_fixture, FixturePaths, FixtureSpec};
use obs_core::ingest::{ingest_directory, load_metadata, Vocabulary};
use obs_core::Corpus;
use rand::Rng;

pub fn fixture_corpus(root: &Path, spec: FixtureSpec) -> (FixturePaths, Corpus) {
    let paths = write_fixture(root, spec).expect("fixture");
    let corpus = ingest_directory(
        &paths.annotations,
        &Vocabulary::load(&paths.vocabulary).unwrap(),
        &load_metadata(&paths.metadata).unwrap(),
    )
    .expect("ingest");
    (paths, corpus)
}

pub fn random_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn unit(a: &[f64]) -> Vec<f64> {
    let n = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.iter().map(|x| x / n).collect()
}

/// Per-coordinate mean, one coordinate at a time.
pub fn naive_mean(vs: &[&[f64]]) -> Vec<f64> {
    let dim = vs[0].len();
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut s = 0.0;
        for v in vs {
            s += v[j];
        }
        out.push(s / vs.len() as f64);
    }
    out
}

/// Naive mean of every label's samples, sorted by label.
pub fn class_means(samples: &[(String, Vec<f64>)]) -> Vec<(String, Vec<f64>)> {
    let mut labels: Vec<&str> = samples.iter().map(|s| s.0.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    labels
        .into_iter()
        .map(|l| {
            let members: Vec<&[f64]> = samples.iter().filter(|s| s.0 == l).map(|s| s.1.as_slice()).collect();
            (l.to_string(), naive_mean(&members))
        })
        .collect()
}

/// Labels sorted by distance to the class means, ties by label.
pub fn brute_force_ranking(means: &[(String, Vec<f64>)], query: &[f64]) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = means.iter().map(|(l, m)| (l.clone(), dist(query, m))).collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

/// Greedy cosine matching F1 with explicit nested loops.
pub fn greedy_f1(cand: &[Vec<f64>], refs: &[Vec<f64>]) -> f64 {
    let mut p = 0.0;
    for c in cand {
        let mut best = f64::NEG_INFINITY;
        for r in refs {
            best = best.max(cosine(c, r));
        }
        p += best;
    }
    p /= cand.len() as f64;
    let mut r_sum = 0.0;
    for r in refs {
        let mut best = f64::NEG_INFINITY;
        for c in cand {
            best = best.max(cosine(c, r));
        }
        r_sum += best;
    }
    let r = r_sum / refs.len() as f64;
    // the score is bounded to [-1, 1]; only mixed-sign P and R leave it
    if p + r == 0.0 {
        0.0
    } else {
        (2.0 * p * r / (p + r)).clamp(-1.0, 1.0)
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum mean assignment cost between equal-length sets of unit vectors.
/// With uniform mass the optimal transport plan is a permutation.
pub fn assignment_distance(cand: &[Vec<f64>], refs: &[Vec<f64>]) -> f64 {
    assert_eq!(cand.len(), refs.len());
    let cu: Vec<_> = cand.iter().map(|v| unit(v)).collect();
    let ru: Vec<_> = refs.iter().map(|v| unit(v)).collect();
    permutations(cand.len())
        .into_iter()
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| dist(&cu[i], &ru[j])).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / cand.len() as f64
}

/// ICC(3,1) from explicitly computed sums of squares.
pub fn icc3_stepwise(x: &[Vec<f64>]) -> f64 {
    let n = x.len() as f64;
    let k = x[0].len() as f64;
    let grand: f64 = x.iter().flatten().sum::<f64>() / (n * k);
    let mut ss_total = 0.0;
    for row in x {
        for v in row {
            ss_total += (v - grand).powi(2);
        }
    }
    let mut ss_rows = 0.0;
    for row in x {
        let m = row.iter().sum::<f64>() / k;
        ss_rows += k * (m - grand).powi(2);
    }
    let mut ss_cols = 0.0;
    for j in 0..x[0].len() {
        let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
        ss_cols += n * (m - grand).powi(2);
    }
    let ss_err = ss_total - ss_rows - ss_cols;
    let ms_rows = ss_rows / (n - 1.0);
    let ms_err = ss_err / ((n - 1.0) * (k - 1.0));
    (ms_rows - ms_err) / (ms_rows + (k - 1.0) * ms_err)
}

/// Krippendorff's alpha computed from explicit value pairs.
pub fn alpha_pairs(units: &[Vec<Option<f64>>], ordinal: bool) -> f64 {
    // (value_a, value_b, weight) for every ordered pair within a unit
    let mut pairs: Vec<(f64, f64, f64)> = Vec::new();
    for u in units {
        let vals: Vec<f64> = u.iter().flatten().copied().collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    pairs.push((vals[i], vals[j], 1.0 / (m as f64 - 1.0)));
                }
            }
        }
    }
    let mut values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let marginal = |v: f64| pairs.iter().filter(|p| p.0 == v).map(|p| p.2).sum::<f64>();
    let n: f64 = pairs.iter().map(|p| p.2).sum();
    let delta2 = |a: f64, b: f64| -> f64 {
        if !ordinal {
            return (a - b).powi(2);
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let between: f64 = values.iter().filter(|&&g| g >= lo && g <= hi).map(|&g| marginal(g)).sum();
        (between - (marginal(lo) + marginal(hi)) / 2.0).powi(2)
    };
    let observed: f64 = pairs.iter().map(|&(a, b, w)| w * delta2(a, b)).sum::<f64>() / n;
    let mut expected = 0.0;
    for &a in &values {
        for &b in &values {
            expected += marginal(a) * marginal(b) * delta2(a, b);
        }
    }
    expected /= n * (n - 1.0);
    1.0 - observed / expected
}

/// Four observers by twelve units with gaps, a standard worked example.
pub fn reliability_example() -> Vec<Vec<Option<u8>>> {
    vec![
        vec![Some(1), Some(1), None, Some(1)],
        vec![Some(2), Some(2), Some(3), Some(2)],
        vec![Some(3), Some(3), Some(3), Some(3)],
        vec![Some(3), Some(3), Some(3), Some(3)],
        vec![Some(2), Some(2), Some(2), Some(2)],
        vec![Some(1), Some(2), Some(3), Some(4)],
        vec![Some(4), Some(4), Some(4), Some(4)],
        vec![Some(1), Some(1), Some(2), Some(1)],
        vec![Some(2), Some(2), Some(2), Some(2)],
        vec![None, Some(5), Some(5), Some(5)],
        vec![None, None, Some(1), Some(1)],
        vec![None, None, Some(3), None],
    ]
}

pub fn as_f64(rows: &[Vec<Option<u8>>]) -> Vec<Vec<Option<f64>>> {
    rows.iter().map(|r| r.iter().map(|v| v.map(f64::from)).collect()).collect()
}

/// Fixture split by character with a prototype model and graph on the
/// training side.
pub struct Trained {
    pub dir: tempfile::TempDir,
    pub paths: FixturePaths,
    pub train: Corpus,
    pub test: Corpus,
    pub model: obs_core::ClassifierModel,
    pub graph: obs_core::KnowledgeGraph,
    pub provider: obs_core::StubProvider,
}

pub fn trained(spec: FixtureSpec, seed: u64) -> Trained {
    use obs_core::embedding::{embed_image, EmbeddingProvider};

    let dir = tempfile::tempdir().unwrap();
    let (paths, corpus) = fixture_corpus(dir.path(), spec);
    let (train, test) =
        obs_core::ingest::split_corpus(&corpus, 0.7, seed, obs_core::ingest::SplitUnit::ByCharacter).unwrap();
    let provider = obs_core::StubProvider::new(64);
    let crops: Vec<_> = train
        .components
        .iter()
        .map(|c| (c.label.clone(), embed_image(&provider, &std::fs::read(&c.image_ref).unwrap()).unwrap()))
        .collect();
    let model = obs_core::classifier::build_prototypes(&crops, provider.name(), false).unwrap();
    let graph =
        obs_core::graph::build_graph(&train, &obs_core::graph::load_explanations(&paths.explanations).unwrap()).unwrap();
    Trained {
        dir,
        paths,
        train,
        test,
        model,
        graph,
        provider,
    }
}
