//! Text embedders for topic retrieval and archetype clustering.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::provider::http::{HttpConfig, HttpEmbeddingClient};
use crate::provider::BackendError;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmbedError {
    #[error("embedder unreachable: {0}")]
    Unreachable(String),
    #[error("network access is disabled (offline mode)")]
    Offline,
}

impl From<BackendError> for EmbedError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Offline => EmbedError::Offline,
            other => EmbedError::Unreachable(other.to_string()),
        }
    }
}

pub trait Embedder: Send + Sync {
    fn fingerprint(&self) -> String;

    /// One vector per input, in input order.
    fn embed_documents(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;

    fn embed_query(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let mut out = self.embed_documents(&[text.to_string()])?;
        out.pop().ok_or_else(|| EmbedError::Unreachable("embedder returned nothing".into()))
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic offline embedder: signed feature hashing of lowercase word
/// unigrams and bigrams, L2-normalized. Exact texts can be pinned to fixed
/// vectors through `overrides`.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub overrides: BTreeMap<String, Vec<f32>>,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 256, seed: 0, overrides: BTreeMap::new() }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim: dim.max(1), seed, overrides: BTreeMap::new() }
    }

    pub fn with_override(mut self, text: impl Into<String>, vector: Vec<f32>) -> Self {
        self.overrides.insert(text.into(), vector);
        self
    }

    pub fn vector(&self, text: &str) -> Vec<f32> {
        if let Some(v) = self.overrides.get(text) {
            return v.clone();
        }
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric() && c != '+' && c != '-').filter(|t| !t.is_empty()).collect();
        let mut v = vec![0f32; self.dim];
        let mut add = |feature: &str| {
            let h = fnv1a(feature.as_bytes(), self.seed);
            let slot = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        };
        for t in &tokens {
            add(t);
        }
        for pair in tokens.windows(2) {
            add(&format!("{} {}", pair[0], pair[1]));
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn fingerprint(&self) -> String {
        format!("hash(dim={},seed={})", self.dim, self.seed)
    }

    fn embed_documents(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Remote embeddings endpoint; documents go out in batches of 32 and queries
/// one at a time.
pub struct HttpEmbedder {
    client: HttpEmbeddingClient,
    pub batch_size: usize,
}

impl HttpEmbedder {
    pub const BATCH_SIZE: usize = 32;

    pub fn new(config: HttpConfig) -> Result<Self, EmbedError> {
        Ok(Self { client: HttpEmbeddingClient::new(config)?, batch_size: Self::BATCH_SIZE })
    }
}

impl Embedder for HttpEmbedder {
    fn fingerprint(&self) -> String {
        format!("http-embed:{}", self.client.model())
    }

    fn embed_documents(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size.max(1)) {
            out.extend(self.client.embed(chunk)?);
        }
        Ok(out)
    }
}
