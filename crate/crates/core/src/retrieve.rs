//! Global top-k ranking over every node of every layer.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::backends::{EmbeddingVector, Embedder};
use crate::docmodel::{ChunkId, ChunkKind};
use crate::error::{Error, Result};
use crate::graphbuild::{cosine_similarity, HierarchicalIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEntry {
    pub chunk_id: ChunkId,
    pub layer_index: usize,
    pub score: f64,
    pub kind: ChunkKind,
}

/// Ranked entries: scores non-increasing, ties ordered by layer then id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub entries: Vec<RetrievalEntry>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Ranking order: score descending, then lower layer, then lower chunk id.
pub fn entry_order(a: &RetrievalEntry, b: &RetrievalEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.layer_index.cmp(&b.layer_index))
        .then(a.chunk_id.cmp(&b.chunk_id))
}

pub fn rank(
    index: &HierarchicalIndex,
    query: &str,
    top_k: usize,
    embedder: &dyn Embedder,
) -> Result<RetrievalResult> {
    if query.trim().is_empty() {
        return Err(Error::input("query is empty"));
    }
    let e_q = embedder.embed(query)?;
    rank_embedding(index, &e_q, top_k)
}

pub fn rank_embedding(
    index: &HierarchicalIndex,
    e_q: &EmbeddingVector,
    top_k: usize,
) -> Result<RetrievalResult> {
    if top_k == 0 {
        return Err(Error::input("top_k must be positive"));
    }
    if index.node_count() == 0 {
        return Err(Error::input("index has no nodes"));
    }
    let mut entries = Vec::with_capacity(index.node_count());
    for layer in &index.layers {
        for (&id, emb) in layer.node_ids.iter().zip(&layer.embeddings) {
            let kind = index.chunk(id).map_or(ChunkKind::Leaf, |c| c.kind);
            entries.push(RetrievalEntry {
                chunk_id: id,
                layer_index: layer.layer_index,
                score: cosine_similarity(e_q, emb)?,
                kind,
            });
        }
    }
    if top_k < entries.len() {
        entries.select_nth_unstable_by(top_k - 1, entry_order);
        entries.truncate(top_k);
    }
    entries.sort_by(entry_order);
    Ok(RetrievalResult { entries })
}

/// Number of entries per layer, for `layer_count` layers. Entries at or
/// beyond `layer_count` are ignored.
pub fn layer_distribution(result: &RetrievalResult, layer_count: usize) -> Vec<usize> {
    let mut counts = vec![0; layer_count];
    for e in &result.entries {
        if let Some(c) = counts.get_mut(e.layer_index) {
            *c += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockBackend;
    use crate::docmodel::BuildConfig;
    use crate::graphbuild::build_hierarchy;

    fn corpus() -> String {
        let mut s = String::new();
        for i in 0..40 {
            s.push_str(&format!("river boat water fish number{i} flows downstream. "));
            s.push_str(&format!("engine piston fuel spark cylinder{i} turns fast. "));
        }
        s
    }

    fn small_index() -> HierarchicalIndex {
        let cfg = BuildConfig { large: 60, small: 12, n_layers: 3, tau: 0.3, ..BuildConfig::default() };
        let m = MockBackend::default();
        build_hierarchy(&corpus(), &cfg, &m, &m).unwrap()
    }

    #[test]
    fn identical_leaf_ranks_first() {
        let index = small_index();
        let m = MockBackend::default();
        let leaf = index.chunks.values().find(|c| c.kind == ChunkKind::Leaf).unwrap();
        let r = rank(&index, &leaf.text, 5, &m).unwrap();
        assert!((r.entries[0].score - 1.0).abs() < 1e-9);
        let top = &r.entries[0];
        // identical bags can tie; the winner must be the earliest such node
        let tied: Vec<_> = r.entries.iter().filter(|e| (e.score - top.score).abs() == 0.0).collect();
        assert!(tied.iter().any(|e| e.chunk_id == leaf.id));
    }

    #[test]
    fn large_top_k_returns_everything_sorted() {
        let index = small_index();
        let m = MockBackend::default();
        let r = rank(&index, "water engine", 10_000, &m).unwrap();
        assert_eq!(r.len(), index.node_count());
        assert!(r.entries.windows(2).all(|w| entry_order(&w[0], &w[1]) == Ordering::Less));
    }

    #[test]
    fn empty_query_is_rejected() {
        let index = small_index();
        assert!(matches!(rank(&index, "  ", 3, &MockBackend::default()), Err(Error::Input(_))));
    }

    #[test]
    fn distribution_counts() {
        assert_eq!(layer_distribution(&RetrievalResult::default(), 2), vec![0, 0]);
        let entries = (0..10)
            .map(|i| RetrievalEntry { chunk_id: i, layer_index: 0, score: 0.5, kind: ChunkKind::Leaf })
            .collect();
        assert_eq!(layer_distribution(&RetrievalResult { entries }, 2), vec![10, 0]);
    }
}
