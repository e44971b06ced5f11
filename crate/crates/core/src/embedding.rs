//! Embedding providers and the vector arithmetic built on them.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Embedding width of the reference image encoder.
pub const DEFAULT_DIM: usize = 768;

/// Environment variable selecting the remote provider.
pub const EMBED_URL_ENV: &str = "OBS_EMBED_URL";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// Fixed-length vector of finite doubles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length copy; fails on the zero vector.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(EmbeddingVector(self.0.iter().map(|v| v / n).collect()))
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedInput<'a> {
    Image(&'a [u8]),
    Text(&'a str),
}

/// Maps images or text to fixed-dimension vectors.
///
/// Implementations must be deterministic within a session and safe to call
/// from several threads.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Raw backend output; [`embed_image`] and [`embed_text`] validate it.
    fn embed_raw(&self, input: EmbedInput<'_>) -> Result<Vec<f64>>;
}

fn checked(provider: &dyn EmbeddingProvider, raw: Vec<f64>) -> Result<EmbeddingVector> {
    if raw.len() != provider.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: provider.dim(),
            actual: raw.len(),
        });
    }
    EmbeddingVector::new(raw)
}

pub fn embed_image(provider: &dyn EmbeddingProvider, image: &[u8]) -> Result<EmbeddingVector> {
    if image.is_empty() {
        return Err(EmbeddingError::EmptyInput);
    }
    checked(provider, provider.embed_raw(EmbedInput::Image(image))?)
}

pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector> {
    if text.is_empty() {
        return Err(EmbeddingError::EmptyInput);
    }
    checked(provider, provider.embed_raw(EmbedInput::Text(text))?)
}

fn same_dim(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

pub fn euclidean_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    same_dim(a, b)?;
    Ok(squared_distance(a.values(), b.values()).sqrt())
}

/// Unchecked squared distance over equal-length slices.
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    same_dim(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Stable 64-bit hash of a byte string (first eight bytes of SHA-256).
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Offline provider: a ChaCha stream seeded from the input hash yields `dim`
/// standard-normal draws, which are then L2-normalised.
#[derive(Debug, Clone)]
pub struct StubProvider {
    dim: usize,
    name: String,
}

impl StubProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        StubProvider {
            dim,
            name: format!("stub-chacha8-normal-d{dim}"),
        }
    }
}

impl Default for StubProvider {
    fn default() -> Self {
        StubProvider::new(DEFAULT_DIM)
    }
}

impl EmbeddingProvider for StubProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, input: EmbedInput<'_>) -> Result<Vec<f64>> {
        let bytes = match input {
            EmbedInput::Image(b) => b,
            EmbedInput::Text(t) => t.as_bytes(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64(bytes));
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct InFlightLimit {
    available: Mutex<usize>,
    cv: Condvar,
}

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        InFlightLimit {
            available: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        InFlightGuard { limit: self }
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.limit.cv.notify_one();
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    kind: &'a str,
    data: String,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    values: Vec<f64>,
}

/// Client for a remote `POST /embed` endpoint.
pub struct HttpProvider {
    endpoint: String,
    dim: usize,
    name: String,
    agent: ureq::Agent,
    limit: InFlightLimit,
}

impl HttpProvider {
    pub fn new(base_url: &str, dim: usize, max_in_flight: usize) -> Self {
        let base = base_url.trim_end_matches('/');
        let endpoint = if base.ends_with("/embed") {
            base.to_string()
        } else {
            format!("{base}/embed")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpProvider {
            name: format!("http:{endpoint}"),
            endpoint,
            dim,
            agent,
            limit: InFlightLimit::new(max_in_flight),
        }
    }
}

impl EmbeddingProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, input: EmbedInput<'_>) -> Result<Vec<f64>> {
        let body = match input {
            EmbedInput::Image(b) => EmbedRequest {
                kind: "image",
                data: base64::engine::general_purpose::STANDARD.encode(b),
            },
            EmbedInput::Text(t) => EmbedRequest {
                kind: "text",
                data: t.to_string(),
            },
        };
        let _permit = self.limit.acquire();
        let resp: EmbedResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| EmbeddingError::ProviderUnavailable(format!("bad response: {e}")))?;
        if resp.dim != resp.values.len() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: resp.dim,
                actual: resp.values.len(),
            });
        }
        Ok(resp.values)
    }
}

/// `OBS_EMBED_URL` selects the remote provider; otherwise the stub.
pub fn provider_from_env(dim: usize, max_in_flight: usize) -> Box<dyn EmbeddingProvider> {
    match std::env::var(EMBED_URL_ENV) {
        Ok(url) if !url.trim().is_empty() => Box::new(HttpProvider::new(&url, dim, max_in_flight)),
        _ => Box::new(StubProvider::new(dim)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    struct Short;
    impl EmbeddingProvider for Short {
        fn name(&self) -> &str {
            "short"
        }
        fn dim(&self) -> usize {
            768
        }
        fn embed_raw(&self, _: EmbedInput<'_>) -> Result<Vec<f64>> {
            Ok(vec![0.5; 512])
        }
    }

    #[test]
    fn wrong_backend_length_is_dimension_mismatch() {
        assert_eq!(
            embed_image(&Short, b"x"),
            Err(EmbeddingError::DimensionMismatch {
                expected: 768,
                actual: 512
            })
        );
    }

    #[test]
    fn stub_is_deterministic_and_unit_norm() {
        let p = StubProvider::default();
        let a = embed_image(&p, b"glyph").unwrap();
        let b = embed_image(&p, b"glyph").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 768);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs() {
        let p = StubProvider::new(8);
        assert_eq!(embed_text(&p, ""), Err(EmbeddingError::EmptyInput));
        assert_eq!(embed_image(&p, b""), Err(EmbeddingError::EmptyInput));
    }

    #[test]
    fn abc_vs_abd_not_identical() {
        let p = StubProvider::default();
        let a = embed_text(&p, "abc").unwrap();
        let b = embed_text(&p, "abd").unwrap();
        assert!(cosine_similarity(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn distance_basics() {
        assert_eq!(euclidean_distance(&v(&[0.0, 0.0]), &v(&[3.0, 4.0])).unwrap(), 5.0);
        let x = v(&[1.0, -2.0, 3.5]);
        assert_eq!(euclidean_distance(&x, &x).unwrap(), 0.0);
        assert!(matches!(
            euclidean_distance(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&v(&[2.0, 1.0]), &v(&[2.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine_similarity(&v(&[1.0, 1.0]), &v(&[-1.0, -1.0])).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::ZeroNorm)
        );
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(
            EmbeddingVector::new(vec![1.0, f64::NAN]),
            Err(EmbeddingError::NonFinite(1))
        );
    }
}
