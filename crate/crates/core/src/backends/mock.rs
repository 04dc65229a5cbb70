//! Deterministic stand-in for real models.
//!
//! Embeddings are hashed bags of words: each token lands in bucket
//! `fnv1a(token) % dim`, counts accumulate and the vector is L2-normalized.
//! Summaries join their inputs with a space and keep the first `max_len`
//! tokens.

use crate::docmodel::{Tokenizer, WhitespaceTokenizer};
use crate::error::{Error, Result};

use super::{EmbeddingVector, Embedder, Reasoner, ReasoningRequest, Summarizer};

#[derive(Debug, Clone)]
pub struct MockBackend {
    dim: usize,
    max_concurrent: usize,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(64, 1)
    }
}

impl MockBackend {
    pub fn new(dim: usize, max_concurrent: usize) -> Self {
        Self { dim: dim.max(1), max_concurrent: max_concurrent.max(1) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `std`'s hasher.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn token_bucket(token: &str, dim: usize) -> usize {
    (fnv1a(token.as_bytes()) % dim as u64) as usize
}

impl Embedder for MockBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::input("cannot embed empty text"));
        }
        let mut counts = vec![0.0; self.dim];
        for token in text.split_whitespace() {
            counts[token_bucket(token, self.dim)] += 1.0;
        }
        EmbeddingVector::normalized(counts)
            .map_err(|_| Error::input("cannot embed text without tokens"))
    }

    fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }
}

impl Summarizer for MockBackend {
    fn summarize(&self, texts: &[&str], max_len: usize) -> Result<String> {
        if texts.is_empty() {
            return Err(Error::input("nothing to summarize"));
        }
        if max_len == 0 {
            return Err(Error::input("max_len must be positive"));
        }
        let joined = texts.join(" ");
        Ok(truncate_tokens(&joined, max_len).0)
    }

    fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }
}

impl Reasoner for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn reason(&self, request: &ReasoningRequest<'_>) -> Result<String> {
        let lead = request
            .context
            .first()
            .map(|c| truncate_tokens(c, 12).0)
            .unwrap_or_else(|| "no retrieved passage".to_string());
        Ok(format!(
            "The question asks: {} Drawing on {} retrieved passage(s), starting with \"{}\", the evidence supports the answer {}.",
            request.question.trim(),
            request.context.len(),
            lead,
            request.answer.trim()
        ))
    }
}

/// Keeps the first `max_len` whitespace tokens of `text`, returning the
/// kept prefix and whether anything was cut.
pub fn truncate_tokens(text: &str, max_len: usize) -> (String, bool) {
    let spans = WhitespaceTokenizer.spans(text);
    if spans.len() <= max_len {
        return (text.trim().to_string(), false);
    }
    if max_len == 0 {
        return (String::new(), true);
    }
    (text[spans[0].start..spans[max_len - 1].end].to_string(), true)
}
