//! Fixed-size character chunking with overlap.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub max_chunk_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self { max_chunk_chars: 1000, overlap_chars: 200 }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_chunk_chars == 0 {
            return Err("max_chunk_chars must be positive".into());
        }
        if self.overlap_chars >= self.max_chunk_chars {
            return Err(format!(
                "overlap_chars ({}) must be smaller than max_chunk_chars ({})",
                self.overlap_chars, self.max_chunk_chars
            ));
        }
        Ok(())
    }
}

/// Half-open character spans covering `0..len`. Consecutive spans overlap by
/// exactly `overlap_chars`; the last span ends at `len`.
pub fn chunk_spans(len: usize, config: ChunkingConfig) -> Vec<(usize, usize)> {
    let max = config.max_chunk_chars.max(1);
    let overlap = config.overlap_chars.min(max - 1);
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + max).min(len);
        spans.push((start, end));
        if end == len {
            break;
        }
        start = end - overlap;
    }
    spans
}

/// Splits `text` into `(span, chunk_text)` pairs; spans are character offsets.
pub fn chunk_text(text: &str, config: ChunkingConfig) -> Vec<((usize, usize), String)> {
    let chars: Vec<char> = text.chars().collect();
    chunk_spans(chars.len(), config)
        .into_iter()
        .map(|(start, end)| ((start, end), chars[start..end].iter().collect()))
        .collect()
}
