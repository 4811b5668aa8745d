//! Text embedders.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::RetrievalError;
use crate::llm::TrafficMeter;
use crate::traffic::Exchange;

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError>;
}

/// Deterministic feature-hashing embedder: each lowercase alphanumeric token
/// adds ±1 to one bucket, and the result is unit-normalized. Needs no network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashEmbedder {
    dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dimension: 64 }
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut vector = vec![0f64; self.dimension];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let hash = fnv1a(token.to_lowercase().as_bytes());
            let bucket = (hash % self.dimension as u64) as usize;
            vector[bucket] += if hash >> 63 == 1 { -1.0 } else { 1.0 };
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            vector.iter_mut().for_each(|v| *v /= norm);
        }
        vector.into_iter().map(|v| v as f32).collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |hash, b| (hash ^ u64::from(*b)).wrapping_mul(0x100_0000_01b3))
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

pub const EMBED_ENDPOINT_VAR: &str = "SYNTHKIT_EMBED_ENDPOINT";
pub const EMBED_MODEL_VAR: &str = "SYNTHKIT_EMBED_MODEL";
pub const EMBED_DIMENSION_VAR: &str = "SYNTHKIT_EMBED_DIMENSION";

/// OpenAI-compatible `/embeddings` client.
pub struct OpenAiEmbedder {
    endpoint: String,
    api_key: String,
    model: String,
    dimension: usize,
    client: reqwest::blocking::Client,
    meter: TrafficMeter,
}

impl OpenAiEmbedder {
    /// Returns `None` when no embedding model is configured.
    pub fn from_env(api_key: String, meter: TrafficMeter) -> Option<Self> {
        let model = std::env::var(EMBED_MODEL_VAR).ok()?;
        let endpoint = std::env::var(EMBED_ENDPOINT_VAR)
            .unwrap_or_else(|_| "https://api.openai.com/v1/embeddings".to_string());
        let dimension = std::env::var(EMBED_DIMENSION_VAR)
            .ok()
            .and_then(|d| d.parse().ok())
            .unwrap_or(1536);
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .ok()?;
        Some(Self { endpoint, api_key, model, dimension, client, meter })
    }
}

impl Embedder for OpenAiEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.model, "input": texts }).to_string();
        let started = Instant::now();
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.clone())
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(|e| RetrievalError::Embed(e.to_string()))?;
        self.meter.push(Exchange {
            backend: "embeddings".into(),
            request_bytes: body.len() as u64,
            response_bytes: response.len() as u64,
            latency: started.elapsed(),
        });
        let value: Value = serde_json::from_str(&response).map_err(|e| RetrievalError::Embed(e.to_string()))?;
        let data = value["data"]
            .as_array()
            .ok_or_else(|| RetrievalError::Embed("response has no data array".into()))?;
        let mut vectors = Vec::with_capacity(data.len());
        for item in data {
            let vector: Vec<f32> = item["embedding"]
                .as_array()
                .ok_or_else(|| RetrievalError::Embed("item without embedding".into()))?
                .iter()
                .map(|v| v.as_f64().unwrap_or(0.0) as f32)
                .collect();
            if vector.len() != self.dimension {
                return Err(RetrievalError::DimensionMismatch { expected: self.dimension, got: vector.len() });
            }
            vectors.push(vector);
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let embedder = HashEmbedder::default();
        let a = embedder.embed_one("R-peaks in ECG data");
        assert_eq!(a, embedder.embed_one("r peaks in ecg DATA"));
        assert_eq!(a.len(), 64);
        let norm: f32 = a.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        assert!(HashEmbedder::default().embed_one("  ").iter().all(|v| *v == 0.0));
    }
}
