//! Similarity-graph layers and the layered index built from them.
//!
//! A layer holds one node per chunk, connected by cosine-similarity edges
//! that survive top-k-per-node selection and the `tau` threshold. Each
//! layer above the base is made of one summary per community detected in
//! the layer below.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use log::info;
use serde::{Deserialize, Serialize};

use crate::backends::{pool, EmbeddingVector, Embedder, Summarizer};
use crate::community::{detect_communities, Partition};
use crate::docmodel::{
    split_text_with, BuildConfig, ChunkId, ChunkKind, DocumentChunk, Tokenizer, WhitespaceTokenizer,
};
use crate::error::{Error, Result};

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::input(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    Ok(dot(a.values(), b.values()).clamp(-1.0, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense symmetric matrix of pairwise cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds a matrix from row-major entries; the input must be square.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::input("similarity matrix must be square and non-empty"));
        }
        Ok(Self { n, entries: rows.concat() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }
}

pub fn build_similarity_matrix(embeddings: &[EmbeddingVector]) -> Result<SimilarityMatrix> {
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::input("cannot build a similarity matrix from no embeddings"));
    }
    let dim = embeddings[0].dim();
    if embeddings.iter().any(|e| e.dim() != dim) {
        return Err(Error::input("embeddings have mixed dimensions"));
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = cosine_similarity(&embeddings[i], &embeddings[j])?;
            entries[i * n + j] = s;
            entries[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix { n, entries })
}

/// Undirected weighted edge between node indices `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

/// For every node, takes its `k_edges` most similar other nodes (ties go to
/// the lower index) and keeps those with similarity `>= tau`. The union is
/// returned once per unordered pair, sorted by `(u, v)`.
///
/// With `k_edges >= n - 1` this is plain thresholding of the full matrix.
pub fn prune_edges(m: &SimilarityMatrix, tau: f64, k_edges: usize) -> Vec<Edge> {
    let n = m.n();
    let mut kept: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for u in 0..n {
        let row = m.row(u);
        order.clear();
        order.extend((0..n).filter(|&v| v != u));
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        for &v in order.iter().take(k_edges) {
            let w = row[v];
            if w >= tau {
                kept.entry((u.min(v), u.max(v))).or_insert(w);
            }
        }
    }
    kept.into_iter().map(|((u, v), w)| Edge { u, v, w }).collect()
}

/// One level of the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLayer {
    pub layer_index: usize,
    pub node_ids: Vec<ChunkId>,
    pub embeddings: Vec<EmbeddingVector>,
    pub edges: Vec<Edge>,
}

impl GraphLayer {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.w).sum()
    }
}

pub fn build_layer(
    chunks: &[DocumentChunk],
    layer_index: usize,
    config: &BuildConfig,
    embedder: &dyn Embedder,
) -> Result<GraphLayer> {
    if chunks.is_empty() {
        return Err(Error::input("cannot build a layer without chunks"));
    }
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let embeddings = embedder.embed_batch(&texts)?;
    let matrix = build_similarity_matrix(&embeddings)?;
    let edges = prune_edges(&matrix, config.tau, config.k_edges);
    Ok(GraphLayer {
        layer_index,
        node_ids: chunks.iter().map(|c| c.id).collect(),
        embeddings,
        edges,
    })
}

/// A community of one layer and the summary chunk that represents it in
/// the next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Community {
    pub id: usize,
    pub members: Vec<ChunkId>,
    pub summary_id: ChunkId,
}

/// The queryable artifact: every layer, every chunk, and the community
/// links between consecutive layers. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalIndex {
    pub layers: Vec<GraphLayer>,
    pub chunks: BTreeMap<ChunkId, DocumentChunk>,
    /// `communities[l]` partitions layer `l`; empty for the top layer.
    pub communities: Vec<Vec<Community>>,
    pub config: BuildConfig,
}

impl HierarchicalIndex {
    pub fn node_count(&self) -> usize {
        self.layers.iter().map(GraphLayer::node_count).sum()
    }

    pub fn chunk(&self, id: ChunkId) -> Option<&DocumentChunk> {
        self.chunks.get(&id)
    }

    /// Checks every structural invariant and reports the first violation.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Format(m));
        if self.layers.is_empty() || self.layers.len() > self.config.n_layers {
            return fail(format!("{} layers for n_layers {}", self.layers.len(), self.config.n_layers));
        }
        if self.communities.len() != self.layers.len() {
            return fail("community table does not match layer count".into());
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.node_count();
            if layer.layer_index != l || layer.embeddings.len() != n || n == 0 {
                return fail(format!("layer {l} is malformed"));
            }
            let mut pairs = BTreeSet::new();
            for e in &layer.edges {
                if e.u >= n || e.v >= n || e.u == e.v || !pairs.insert((e.u.min(e.v), e.u.max(e.v))) {
                    return fail(format!("layer {l} has an invalid or duplicate edge {e:?}"));
                }
                if e.w < self.config.tau {
                    return fail(format!("layer {l} edge weight {} below tau", e.w));
                }
            }
            for id in &layer.node_ids {
                match self.chunks.get(id) {
                    Some(c) if c.layer_index == l => {}
                    _ => return fail(format!("layer {l} node {id} has no matching chunk")),
                }
            }
            let comms = &self.communities[l];
            if let Some(next) = self.layers.get(l + 1) {
                if comms.len() != next.node_count() {
                    return fail(format!("layer {} has {} nodes for {} communities", l + 1, next.node_count(), comms.len()));
                }
                let mut seen: Vec<ChunkId> = comms.iter().flat_map(|c| c.members.iter().copied()).collect();
                seen.sort_unstable();
                let mut nodes = layer.node_ids.clone();
                nodes.sort_unstable();
                if seen != nodes {
                    return fail(format!("communities of layer {l} do not partition its nodes"));
                }
                for (c, &summary) in comms.iter().zip(&next.node_ids) {
                    let chunk = &self.chunks[&summary];
                    if c.summary_id != summary || chunk.source_ids != c.members {
                        return fail(format!("community {} of layer {l} has broken provenance", c.id));
                    }
                }
            } else if !comms.is_empty() {
                return fail("top layer must not carry communities".into());
            }
        }
        for c in self.chunks.values() {
            if (c.kind == ChunkKind::Leaf) != c.source_ids.is_empty() {
                return fail(format!("chunk {} kind disagrees with its sources", c.id));
            }
            if c.layer_index > 0 && c.source_ids.iter().any(|s| self.chunks[s].layer_index + 1 != c.layer_index) {
                return fail(format!("summary {} has sources outside the layer below", c.id));
            }
        }
        Ok(())
    }
}

/// Runs the full build: split into large documents, summarize each, split
/// them into small chunks, then alternate layer construction and community
/// summarization up to `config.n_layers` layers.
///
/// Stops early when a layer has at most two nodes or when community
/// detection leaves every node on its own.
pub fn build_hierarchy(
    text: &str,
    config: &BuildConfig,
    embedder: &dyn Embedder,
    summarizer: &dyn Summarizer,
) -> Result<HierarchicalIndex> {
    build_hierarchy_with(&WhitespaceTokenizer, text, config, embedder, summarizer)
}

pub fn build_hierarchy_with(
    tokenizer: &dyn Tokenizer,
    text: &str,
    config: &BuildConfig,
    embedder: &dyn Embedder,
    summarizer: &dyn Summarizer,
) -> Result<HierarchicalIndex> {
    config.validate()?;
    let large_docs = split_text_with(tokenizer, text, config.large, 0)?;
    if large_docs.is_empty() {
        return Err(Error::input("input text has no tokens"));
    }
    let at_layer = |layer: usize| move |e: Error| Error::Layer { layer, source: Box::new(e) };

    let summary_texts = pool::map(&large_docs, summarizer.max_concurrent(), |_, d| {
        summarizer.summarize(&[d.text.as_str()], config.small)
    });
    let summary_texts = pool::collect_indexed(summary_texts).map_err(at_layer(0))?;

    let mut next_id = large_docs.len() as ChunkId;
    let mut leaves_per_doc = Vec::with_capacity(large_docs.len());
    for doc in &large_docs {
        let leaves = split_text_with(tokenizer, &doc.text, config.small, next_id)?;
        next_id += leaves.len() as ChunkId;
        leaves_per_doc.push(leaves);
    }

    let mut current: Vec<DocumentChunk> = summary_texts
        .into_iter()
        .zip(&leaves_per_doc)
        .enumerate()
        .map(|(i, (s, leaves))| {
            DocumentChunk::summary(i as ChunkId, s, 0, leaves.iter().map(|c| c.id).collect(), tokenizer)
        })
        .collect();
    current.extend(leaves_per_doc.into_iter().flatten());

    let mut chunks: BTreeMap<ChunkId, DocumentChunk> = BTreeMap::new();
    let mut layers = Vec::new();
    let mut communities = Vec::new();

    loop {
        let l = layers.len();
        let layer = build_layer(&current, l, config, embedder).map_err(at_layer(l))?;
        info!("layer {l}: {} nodes, {} edges", layer.node_count(), layer.edges.len());
        chunks.extend(current.drain(..).map(|c| (c.id, c)));
        let n = layer.node_count();
        layers.push(layer);
        communities.push(Vec::new());
        if layers.len() == config.n_layers || n <= 2 {
            break;
        }
        let layer = &layers[l];
        let partition = detect_communities(layer, config.resolution, layer_seed(config.seed, l));
        if partition.community_count == n {
            break;
        }
        let groups = partition.members();
        let member_texts: Vec<Vec<&str>> = groups
            .iter()
            .map(|g| g.iter().map(|&i| chunks[&layer.node_ids[i]].text.as_str()).collect())
            .collect();
        let summaries = pool::map(&member_texts, summarizer.max_concurrent(), |_, texts| {
            summarizer.summarize(texts, config.small)
        });
        let summaries = pool::collect_indexed(summaries).map_err(at_layer(l + 1))?;
        for (cid, (group, text)) in groups.iter().zip(summaries).enumerate() {
            let members: Vec<ChunkId> = group.iter().map(|&i| layer.node_ids[i]).collect();
            let summary = DocumentChunk::summary(next_id, text, l + 1, members.clone(), tokenizer);
            communities[l].push(Community { id: cid, members, summary_id: next_id });
            current.push(summary);
            next_id += 1;
        }
    }

    Ok(HierarchicalIndex { layers, chunks, communities, config: config.clone() })
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (layer as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl Partition {
    /// Node indices grouped by community id, each group ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.community_count];
        for (node, &c) in self.assignment.iter().enumerate() {
            groups[c].push(node);
        }
        groups
    }
}
