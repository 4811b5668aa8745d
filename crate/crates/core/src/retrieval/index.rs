//! Flat exhaustive vector index with cosine similarity.

use serde::{Deserialize, Serialize};

use super::embed::Embedder;
use super::RetrievalError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChunk {
    pub doc_ref: String,
    /// Character offsets into the source document's body text.
    pub span: (usize, usize),
    pub text: String,
    pub embedding: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub chunk: KnowledgeChunk,
    pub similarity: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KnowledgeIndex {
    chunks: Vec<KnowledgeChunk>,
    dimension: Option<usize>,
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let similarity = dot / (na.sqrt() * nb.sqrt());
    if similarity.is_nan() {
        f64::NEG_INFINITY
    } else {
        similarity
    }
}

impl KnowledgeIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn chunks(&self) -> &[KnowledgeChunk] {
        &self.chunks
    }

    /// Appends a chunk. The first insert fixes the index dimension.
    pub fn push(&mut self, chunk: KnowledgeChunk) -> Result<(), RetrievalError> {
        let got = chunk.embedding.len();
        match self.dimension {
            Some(expected) if expected != got => return Err(RetrievalError::DimensionMismatch { expected, got }),
            None => self.dimension = Some(got),
            _ => {}
        }
        self.chunks.push(chunk);
        Ok(())
    }

    /// Top-`k` chunks by cosine similarity to `query`, descending; ties keep
    /// insertion order.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Retrieved>, RetrievalError> {
        if k == 0 || self.chunks.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(expected) = self.dimension {
            if expected != query.len() {
                return Err(RetrievalError::DimensionMismatch { expected, got: query.len() });
            }
        }
        let mut scored: Vec<(usize, f64)> =
            self.chunks.iter().enumerate().map(|(i, c)| (i, cosine(query, &c.embedding))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, similarity)| Retrieved { chunk: self.chunks[i].clone(), similarity })
            .collect())
    }
}

pub fn retrieve_context(
    query: &str,
    k: usize,
    index: &KnowledgeIndex,
    embedder: &dyn Embedder,
) -> Result<Vec<Retrieved>, RetrievalError> {
    if k == 0 || index.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(expected) = index.dimension() {
        if expected != embedder.dimension() {
            return Err(RetrievalError::DimensionMismatch { expected, got: embedder.dimension() });
        }
    }
    let vectors = embedder.embed(&[query.to_string()])?;
    let vector = vectors.into_iter().next().unwrap_or_default();
    index.search(&vector, k)
}
