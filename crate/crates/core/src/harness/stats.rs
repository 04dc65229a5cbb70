//! Summary figures for a built index.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graphbuild::HierarchicalIndex;
use crate::retrieve::{layer_distribution, rank_embedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub nodes: usize,
    pub edges: usize,
    pub total_weight: f64,
    /// Sizes of the communities partitioning this layer; empty for the top.
    pub community_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub layers: Vec<LayerStats>,
    pub chunk_count: usize,
    /// Depth used for the retrieval probes.
    pub probe_top_k: usize,
    pub probe_count: usize,
    /// Sum of `layer_distribution` over one probe per layer-0 node, each
    /// querying with that node's own embedding.
    pub layer_hits: Vec<usize>,
}

impl IndexStats {
    /// Share of probe hits per layer; zeros when there were no probes.
    pub fn layer_shares(&self) -> Vec<f64> {
        let total: usize = self.layer_hits.iter().sum();
        self.layer_hits.iter().map(|&h| if total == 0 { 0.0 } else { h as f64 / total as f64 }).collect()
    }
}

pub fn index_stats(index: &HierarchicalIndex, probe_top_k: usize) -> Result<IndexStats> {
    let layers = index
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| LayerStats {
            layer: l,
            nodes: layer.node_count(),
            edges: layer.edges.len(),
            total_weight: layer.total_weight(),
            community_sizes: index.communities.get(l).map_or_else(Vec::new, |cs| cs.iter().map(|c| c.members.len()).collect()),
        })
        .collect();
    let n_layers = index.layers.len();
    let mut layer_hits = vec![0; n_layers];
    let probes = index.layers.first().map_or(&[][..], |l| &l.embeddings[..]);
    for e in probes {
        let r = rank_embedding(index, e, probe_top_k)?;
        for (acc, c) in layer_hits.iter_mut().zip(layer_distribution(&r, n_layers)) {
            *acc += c;
        }
    }
    Ok(IndexStats { layers, chunk_count: index.chunks.len(), probe_top_k, probe_count: probes.len(), layer_hits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockBackend;
    use crate::docmodel::BuildConfig;
    use crate::graphbuild::build_hierarchy;

    #[test]
    fn stats_agree_with_the_index() {
        let text = "rivers carry boats downstream. ".repeat(40) + &"engines burn fuel with a spark. ".repeat(40);
        let cfg = BuildConfig { large: 40, small: 8, tau: 0.3, ..BuildConfig::default() };
        let m = MockBackend::default();
        let index = build_hierarchy(&text, &cfg, &m, &m).unwrap();
        let s = index_stats(&index, 5).unwrap();
        assert_eq!(s.layers.len(), index.layers.len());
        for (ls, layer) in s.layers.iter().zip(&index.layers) {
            assert_eq!(ls.nodes, layer.node_count());
            assert_eq!(ls.edges, layer.edges.len());
        }
        for w in s.layers.windows(2) {
            assert_eq!(w[0].community_sizes.len(), w[1].nodes);
            assert_eq!(w[0].community_sizes.iter().sum::<usize>(), w[0].nodes);
        }
        assert_eq!(s.probe_count, index.layers[0].node_count());
        assert_eq!(s.layer_hits.iter().sum::<usize>(), s.probe_count * 5.min(index.node_count()));
        assert!((s.layer_shares().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
