//! Exact optimal transport between token distributions and the mover
//! score built on it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::text::{embed_tokens, TokenSequence};
use super::MetricError;
use crate::embedding::{euclidean_distance, EmbeddingProvider, EmbeddingVector};

/// Largest token grid solved exactly.
pub const MAX_TRANSPORT_TOKENS: usize = 64;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Min-cost flow by successive shortest paths with Dijkstra over reduced
/// costs. Capacities are real-valued.
struct FlowNetwork {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(n: usize) -> Self {
        FlowNetwork {
            arcs: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        self.adj[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap, cost });
        self.adj[to].push(self.arcs.len());
        self.arcs.push(Arc {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    }

    /// Pushes up to `want` units from `s` to `t`; returns (flow, cost).
    fn min_cost_flow(&mut self, s: usize, t: usize, want: f64) -> (f64, f64) {
        let n = self.adj.len();
        let mut potential = vec![0.0; n];
        let mut flow = 0.0;
        let mut cost = 0.0;
        while want - flow > EPS {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev: Vec<Option<usize>> = vec![None; n];
            let mut done = vec![false; n];
            dist[s] = 0.0;
            // dense graph: the O(V^2) scan beats a heap here
            loop {
                let mut u = None;
                for v in 0..n {
                    if !done[v] && dist[v].is_finite() && u.is_none_or(|b: usize| dist[v] < dist[b]) {
                        u = Some(v);
                    }
                }
                let Some(u) = u else { break };
                done[u] = true;
                for &ai in &self.adj[u] {
                    let a = self.arcs[ai];
                    if a.cap <= EPS {
                        continue;
                    }
                    let reduced = (a.cost + potential[u] - potential[a.to]).max(0.0);
                    let nd = dist[u] + reduced;
                    if nd < dist[a.to] {
                        dist[a.to] = nd;
                        prev[a.to] = Some(ai);
                    }
                }
            }
            if !dist[t].is_finite() {
                break;
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            let mut push = want - flow;
            let mut v = t;
            while let Some(ai) = prev[v] {
                push = push.min(self.arcs[ai].cap);
                v = self.arcs[ai ^ 1].to;
            }
            let mut v = t;
            while let Some(ai) = prev[v] {
                self.arcs[ai].cap -= push;
                self.arcs[ai ^ 1].cap += push;
                cost += push * self.arcs[ai].cost;
                v = self.arcs[ai ^ 1].to;
            }
            flow += push;
        }
        (flow, cost)
    }
}

/// Minimum total cost of moving mass `supply` onto mass `demand` with the
/// given cost matrix. Both mass vectors must sum to the same total.
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> Result<f64, MetricError> {
    let (n, m) = (supply.len(), demand.len());
    if n == 0 || m == 0 {
        return Err(MetricError::EmptyInput);
    }
    if n > MAX_TRANSPORT_TOKENS || m > MAX_TRANSPORT_TOKENS {
        return Err(MetricError::ProblemTooLarge {
            rows: n,
            cols: m,
            max: MAX_TRANSPORT_TOKENS,
        });
    }
    let total: f64 = supply.iter().sum();
    let s = n + m;
    let t = s + 1;
    let mut net = FlowNetwork::new(n + m + 2);
    for (i, &a) in supply.iter().enumerate() {
        net.add(s, i, a, 0.0);
        for (j, &c) in cost[i].iter().enumerate() {
            net.add(i, n + j, f64::INFINITY, c);
        }
    }
    for (j, &b) in demand.iter().enumerate() {
        net.add(n + j, t, b, 0.0);
    }
    let (_, c) = net.min_cost_flow(s, t, total);
    Ok(c)
}

/// Inverse document frequencies for weighting token mass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub idf: BTreeMap<String, f64>,
    /// Weight of tokens absent from the table.
    pub default: f64,
}

impl IdfTable {
    /// `idf(t) = ln((N + 1) / (df(t) + 1))` over the given documents.
    pub fn from_documents(docs: &[TokenSequence]) -> Self {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for d in docs {
            let mut seen: Vec<&str> = d.tokens.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        IdfTable {
            idf: df
                .into_iter()
                .map(|(t, c)| (t.to_string(), ((n + 1.0) / (c as f64 + 1.0)).ln()))
                .collect(),
            default: (n + 1.0).ln(),
        }
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.idf.get(token).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MoverOptions<'a> {
    /// Weight token mass by IDF instead of uniformly.
    pub idf: Option<&'a IdfTable>,
}

fn masses(seq: &TokenSequence, idf: Option<&IdfTable>) -> Vec<f64> {
    let raw: Vec<f64> = match idf {
        Some(t) => seq.tokens.iter().map(|tok| t.weight(tok).max(0.0)).collect(),
        None => vec![1.0; seq.len()],
    };
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return vec![1.0 / seq.len() as f64; seq.len()];
    }
    raw.into_iter().map(|w| w / sum).collect()
}

/// Word mover's distance between normalised token embeddings.
pub fn word_movers_distance(
    cand: &[EmbeddingVector],
    cand_mass: &[f64],
    refs: &[EmbeddingVector],
    ref_mass: &[f64],
) -> Result<f64, MetricError> {
    let cn: Vec<EmbeddingVector> = cand.iter().map(|v| v.normalized()).collect::<Result<_, _>>()?;
    let rn: Vec<EmbeddingVector> = refs.iter().map(|v| v.normalized()).collect::<Result<_, _>>()?;
    let mut cost = vec![vec![0.0; rn.len()]; cn.len()];
    for (i, c) in cn.iter().enumerate() {
        for (j, r) in rn.iter().enumerate() {
            cost[i][j] = euclidean_distance(c, r)?;
        }
    }
    transport_cost(cand_mass, ref_mass, &cost)
}

/// `1 - WMD`; equals 1 for identical sequences.
pub fn mover_score(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    provider: &dyn EmbeddingProvider,
    opts: MoverOptions<'_>,
) -> Result<f64, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if candidate.len() > MAX_TRANSPORT_TOKENS || reference.len() > MAX_TRANSPORT_TOKENS {
        return Err(MetricError::ProblemTooLarge {
            rows: candidate.len(),
            cols: reference.len(),
            max: MAX_TRANSPORT_TOKENS,
        });
    }
    let ce = embed_tokens(candidate, provider)?;
    let re = embed_tokens(reference, provider)?;
    let wmd = word_movers_distance(&ce, &masses(candidate, opts.idf), &re, &masses(reference, opts.idf))?;
    Ok(1.0 - wmd)
}
