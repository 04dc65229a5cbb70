//! Text units and the splitter that turns raw input into large documents
//! and small chunks.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ChunkId = u64;

/// Splits text into tokens, reported as byte spans into the input so chunk
/// text can be sliced out of the original with its inner whitespace intact.
pub trait Tokenizer: Send + Sync {
    fn spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count(&self, text: &str) -> usize {
        self.spans(text).len()
    }
}

/// Tokens are maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, ch) in text.char_indices() {
            match (ch.is_whitespace(), start) {
                (true, Some(s)) => {
                    out.push(s..i);
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push(s..text.len());
        }
        out
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Token count under the default whitespace tokenizer.
pub fn count_tokens(text: &str) -> usize {
    WhitespaceTokenizer.count(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkKind {
    Leaf,
    Summary,
}

impl ChunkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChunkKind::Leaf => "leaf",
            ChunkKind::Summary => "summary",
        }
    }
}

/// A node payload: either a split of the source text or a generated summary.
///
/// Summaries at layer 0 summarize one large document and point at the leaf
/// chunks cut from it; summaries at layer `L > 0` summarize a community of
/// layer `L - 1` and point at its members.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub id: ChunkId,
    pub text: String,
    pub token_count: usize,
    pub kind: ChunkKind,
    pub layer_index: usize,
    pub source_ids: Vec<ChunkId>,
}

impl DocumentChunk {
    pub fn leaf(id: ChunkId, text: impl Into<String>, tokenizer: &dyn Tokenizer) -> Self {
        let text = text.into();
        Self {
            id,
            token_count: tokenizer.count(&text),
            text,
            kind: ChunkKind::Leaf,
            layer_index: 0,
            source_ids: Vec::new(),
        }
    }

    pub fn summary(
        id: ChunkId,
        text: impl Into<String>,
        layer_index: usize,
        source_ids: Vec<ChunkId>,
        tokenizer: &dyn Tokenizer,
    ) -> Self {
        let text = text.into();
        Self {
            id,
            token_count: tokenizer.count(&text),
            text,
            kind: ChunkKind::Summary,
            layer_index,
            source_ids,
        }
    }
}

/// Parameters of an index build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    /// Target token length of large documents.
    pub large: usize,
    /// Target token length of small chunks and of every summary.
    pub small: usize,
    pub n_layers: usize,
    /// Minimum similarity for an edge to be kept.
    pub tau: f64,
    /// Neighbours considered per node when pruning edges.
    pub k_edges: usize,
    pub top_k_retrieval: usize,
    /// Modularity resolution.
    pub resolution: f64,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            large: 2048,
            small: 256,
            n_layers: 2,
            tau: 0.5,
            k_edges: 10,
            top_k_retrieval: 10,
            resolution: 1.0,
            seed: 0,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.large == 0 || self.small == 0 {
            return fail("large and small must be positive");
        }
        if self.small >= self.large {
            return fail("small must be less than large");
        }
        if self.n_layers == 0 {
            return fail("n_layers must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail("tau must lie in [0, 1]");
        }
        if self.k_edges == 0 || self.top_k_retrieval == 0 {
            return fail("k_edges and top_k_retrieval must be positive");
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return fail("resolution must be a positive real");
        }
        Ok(())
    }
}

/// Splits `text` into chunks of at most `target_len` whitespace tokens,
/// numbered from 0.
pub fn split_text(text: &str, target_len: usize) -> Result<Vec<DocumentChunk>> {
    split_text_with(&WhitespaceTokenizer, text, target_len, 0)
}

/// Greedy left-to-right split at token boundaries. When a window has to be
/// cut, the cut is moved back to the last sentence-final token inside the
/// window's final fifth, if there is one.
pub fn split_text_with(
    tokenizer: &dyn Tokenizer,
    text: &str,
    target_len: usize,
    first_id: ChunkId,
) -> Result<Vec<DocumentChunk>> {
    if target_len == 0 {
        return Err(Error::input("target_len must be at least 1"));
    }
    let spans = tokenizer.spans(text);
    let tail = (target_len / 5).max(1);
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < spans.len() {
        let remaining = spans.len() - start;
        let len = if remaining <= target_len {
            remaining
        } else {
            let window_end = start + target_len;
            (window_end - tail..window_end)
                .rev()
                .find(|&j| ends_sentence(&text[spans[j].clone()]))
                .map_or(target_len, |j| j + 1 - start)
        };
        let body = &text[spans[start].start..spans[start + len - 1].end];
        chunks.push(DocumentChunk {
            id: first_id + chunks.len() as ChunkId,
            text: body.to_string(),
            token_count: len,
            kind: ChunkKind::Leaf,
            layer_index: 0,
            source_ids: Vec::new(),
        });
        start += len;
    }
    Ok(chunks)
}

fn ends_sentence(token: &str) -> bool {
    let trimmed = token.trim_end_matches(['"', '\'', ')', ']', '\u{201d}', '\u{2019}']);
    trimmed.ends_with(['.', '!', '?'])
}

/// Collapses every whitespace run to a single space.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
