//! Semantic-similarity cache for graph tool results.
//!
//! A lookup embeds the query text and returns the stored result of the most
//! similar entry when its cosine similarity reaches the threshold. Eviction
//! is least-recently-used over a logical clock. All operations take a single
//! lock, so lookups and inserts are linearizable.

use std::sync::Mutex;

use crate::embedding::{cosine_similarity, embed_text, EmbeddingError, EmbeddingProvider, EmbeddingVector};

use super::EvidenceItem;

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub key_embedding: EmbeddingVector,
    pub query_text: String,
    pub result: Vec<EvidenceItem>,
    pub last_used: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheHit {
    pub items: Vec<EvidenceItem>,
    pub similarity: f64,
    pub matched_query: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

#[derive(Debug, Default)]
struct State {
    entries: Vec<CacheEntry>,
    clock: u64,
    stats: CacheStats,
}

#[derive(Debug)]
pub struct SemanticCache {
    capacity: usize,
    threshold: f64,
    state: Mutex<State>,
}

impl SemanticCache {
    /// `threshold` must lie in (0, 1]. A capacity of zero disables caching.
    pub fn new(capacity: usize, threshold: f64) -> Result<Self, String> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(format!("cache threshold {threshold} outside (0, 1]"));
        }
        Ok(SemanticCache {
            capacity,
            threshold,
            state: Mutex::new(State::default()),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    fn state(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn len(&self) -> usize {
        self.state().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        self.state().stats
    }

    /// Stored query texts, oldest insertion first.
    pub fn queries(&self) -> Vec<String> {
        self.state().entries.iter().map(|e| e.query_text.clone()).collect()
    }

    pub fn lookup(
        &self,
        query_text: &str,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Option<CacheHit>, EmbeddingError> {
        if self.capacity == 0 {
            self.state().stats.misses += 1;
            return Ok(None);
        }
        let key = embed_text(provider, query_text)?;
        Ok(self.lookup_embedding(&key))
    }

    pub fn lookup_embedding(&self, key: &EmbeddingVector) -> Option<CacheHit> {
        let mut st = self.state();
        let best = st
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                // identical keys are exactly 1; the float quotient can land a ulp below
                if *key == e.key_embedding {
                    return Some((i, 1.0));
                }
                cosine_similarity(key, &e.key_embedding).ok().map(|s| (i, s))
            })
            .fold(None, |acc: Option<(usize, f64)>, (i, s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((i, s)),
            });
        match best {
            Some((i, sim)) if sim >= self.threshold => {
                st.clock += 1;
                let now = st.clock;
                st.stats.hits += 1;
                let entry = &mut st.entries[i];
                entry.last_used = now;
                Some(CacheHit {
                    items: entry.result.clone(),
                    similarity: sim,
                    matched_query: entry.query_text.clone(),
                })
            }
            _ => {
                st.stats.misses += 1;
                None
            }
        }
    }

    pub fn insert(
        &self,
        query_text: &str,
        result: Vec<EvidenceItem>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<(), EmbeddingError> {
        if self.capacity == 0 {
            return Ok(());
        }
        let key = embed_text(provider, query_text)?;
        self.insert_embedding(key, query_text, result);
        Ok(())
    }

    /// Inserts or refreshes an entry; evicts the least recently used entry
    /// when over capacity.
    pub fn insert_embedding(&self, key: EmbeddingVector, query_text: &str, result: Vec<EvidenceItem>) {
        if self.capacity == 0 {
            return;
        }
        let mut st = self.state();
        st.clock += 1;
        let now = st.clock;
        if let Some(e) = st.entries.iter_mut().find(|e| e.query_text == query_text) {
            e.key_embedding = key;
            e.result = result;
            e.last_used = now;
            return;
        }
        st.entries.push(CacheEntry {
            key_embedding: key,
            query_text: query_text.to_string(),
            result,
            last_used: now,
        });
        while st.entries.len() > self.capacity {
            let lru = st
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(i, _)| i)
                .expect("non-empty");
            st.entries.remove(lru);
            st.stats.evictions += 1;
        }
    }
}

pub fn cache_lookup(
    cache: &SemanticCache,
    query_text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<Option<CacheHit>, EmbeddingError> {
    cache.lookup(query_text, provider)
}

pub fn cache_insert(
    cache: &SemanticCache,
    query_text: &str,
    result: Vec<EvidenceItem>,
    provider: &dyn EmbeddingProvider,
) -> Result<(), EmbeddingError> {
    cache.insert(query_text, result, provider)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::StubProvider;

    fn item(s: &str) -> Vec<EvidenceItem> {
        vec![EvidenceItem::new(super::super::EvidenceKind::ComponentExplanation, s, s)]
    }

    #[test]
    fn lru_eviction_with_touch() {
        let p = StubProvider::new(32);
        let c = SemanticCache::new(2, 0.95).unwrap();
        c.insert("q1", item("1"), &p).unwrap();
        c.insert("q2", item("2"), &p).unwrap();
        assert!(c.lookup("q1", &p).unwrap().is_some());
        c.insert("q3", item("3"), &p).unwrap();
        assert_eq!(c.queries(), ["q1", "q3"]);
        assert!(c.lookup("q2", &p).unwrap().is_none());
        assert_eq!(c.stats().evictions, 1);
    }

    #[test]
    fn zero_capacity_is_noop() {
        let p = StubProvider::new(8);
        let c = SemanticCache::new(0, 0.5).unwrap();
        c.insert("q", item("x"), &p).unwrap();
        assert!(c.is_empty());
        assert!(c.lookup("q", &p).unwrap().is_none());
    }

    #[test]
    fn exact_repeat_hits_and_empty_misses() {
        let p = StubProvider::new(16);
        let c = SemanticCache::new(4, 1.0).unwrap();
        assert!(c.lookup("q", &p).unwrap().is_none());
        c.insert("q", item("x"), &p).unwrap();
        let hit = c.lookup("q", &p).unwrap().unwrap();
        assert!(hit.similarity >= 1.0 - 1e-12);
        assert_eq!(hit.items, item("x"));
    }

    #[test]
    fn threshold_validated() {
        assert!(SemanticCache::new(1, 0.0).is_err());
        assert!(SemanticCache::new(1, 1.5).is_err());
        assert!(SemanticCache::new(1, 1.0).is_ok());
    }
}
