use proptest::prelude::*;

use strata::backends::{EmbeddingVector, MockBackend};
use strata::community::{detect_communities, quality, Partition};
use strata::docmodel::{count_tokens, split_text, BuildConfig};
use strata::graphbuild::{
    build_hierarchy, build_similarity_matrix, cosine_similarity, prune_edges, Edge, GraphLayer, HierarchicalIndex,
};
use strata::harness::metrics::rouge_l_f1;
use strata::harness::persist::{from_bytes, to_bytes};
use strata::modeseek::{kl_divergence, optimal_policy, softmax, CategoricalPolicy, RewardSpec};
use strata::prefsynth::build_contexts;
use strata::retrieve::{rank, rank_embedding, RetrievalResult};

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["river", "boat", "fish", "engine", "fuel", "spark", "tree", "leaf", "root", "sky"])
        .prop_map(str::to_string)
}

fn corpus() -> impl Strategy<Value = String> {
    prop::collection::vec((prop::collection::vec(word(), 3..9), any::<bool>()), 4..40).prop_map(|sentences| {
        sentences
            .into_iter()
            .map(|(w, stop)| format!("{}{}", w.join(" "), if stop { ". " } else { " " }))
            .collect()
    })
}

fn unit_vector(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(|v| EmbeddingVector::normalized(v).unwrap())
}

fn small_index(text: &str, seed: u64) -> HierarchicalIndex {
    let cfg = BuildConfig { large: 30, small: 6, n_layers: 3, tau: 0.3, seed, ..BuildConfig::default() };
    let m = MockBackend::default();
    build_hierarchy(text, &cfg, &m, &m).unwrap()
}

fn layer(n: usize, edges: &[(usize, usize, f64)]) -> GraphLayer {
    GraphLayer {
        layer_index: 0,
        node_ids: (0..n as u64).collect(),
        embeddings: (0..n).map(|_| EmbeddingVector::normalized(vec![1.0]).unwrap()).collect(),
        edges: edges.iter().map(|&(u, v, w)| Edge { u, v, w }).collect(),
    }
}

fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
    (2usize..14).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        (Just(n), prop::collection::vec(prop::option::weighted(0.3, 0.3f64..1.0), pairs.len())).prop_map(
            move |(n, ws)| {
                let edges = pairs.iter().zip(ws).filter_map(|(&(u, v), w)| w.map(|w| (u, v, w))).collect();
                (n, edges)
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn splitting_preserves_tokens_and_bounds(text in corpus(), target in 1usize..40) {
        let chunks = split_text(&text, target).unwrap();
        let joined: Vec<&str> = chunks.iter().flat_map(|c| c.text.split_whitespace()).collect();
        let original: Vec<&str> = text.split_whitespace().collect();
        prop_assert_eq!(joined, original);
        for c in &chunks {
            prop_assert!(c.token_count >= 1 && c.token_count <= target);
            prop_assert_eq!(c.token_count, count_tokens(&c.text));
        }
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(a in unit_vector(8), b in unit_vector(8)) {
        let ab = cosine_similarity(&a, &b).unwrap();
        prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn pruned_edges_are_canonical(vs in prop::collection::vec(unit_vector(4), 1..20), tau in -0.5f64..0.9, k in 0usize..8) {
        let m = build_similarity_matrix(&vs).unwrap();
        for i in 0..m.n() {
            for j in 0..m.n() {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        let edges = prune_edges(&m, tau, k);
        prop_assert!(edges.windows(2).all(|w| (w[0].u, w[0].v) < (w[1].u, w[1].v)));
        for e in &edges {
            prop_assert!(e.u < e.v && e.w >= tau && e.w == m.get(e.u, e.v));
        }
    }

    #[test]
    fn leiden_never_worse_than_singletons_and_connected((n, edges) in graph(), seed in any::<u64>()) {
        let l = layer(n, &edges);
        let p = detect_communities(&l, 1.0, seed);
        prop_assert_eq!(p.assignment.len(), n);
        prop_assert!(quality(&l, &p, 1.0) >= quality(&l, &Partition::singletons(n), 1.0) - 1e-12);
        prop_assert_eq!(&p, &detect_communities(&l, 1.0, seed));
        // each community induces a connected subgraph
        for members in p.members() {
            let mut reached = vec![members[0]];
            let mut frontier = vec![members[0]];
            while let Some(x) = frontier.pop() {
                for &(u, v, _) in &edges {
                    for (a, b) in [(u, v), (v, u)] {
                        if a == x && members.contains(&b) && !reached.contains(&b) {
                            reached.push(b);
                            frontier.push(b);
                        }
                    }
                }
            }
            prop_assert_eq!(reached.len(), members.len());
        }
    }

    #[test]
    fn kl_is_non_negative(a in prop::collection::vec(-3.0f64..3.0, 2..8), shift in -2.0f64..2.0) {
        let p = softmax(&a);
        let q = softmax(&a.iter().enumerate().map(|(i, x)| x + shift * i as f64).collect::<Vec<_>>());
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn optimal_policy_ignores_reward_offsets(
        r in prop::collection::vec(-3.0f64..3.0, 2..8),
        c in -50.0f64..50.0,
        beta in 0.05f64..5.0,
    ) {
        let sft = CategoricalPolicy::uniform(r.len()).unwrap();
        let a = optimal_policy(&sft, &RewardSpec::new(r.clone(), beta).unwrap()).unwrap().probs();
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        let b = optimal_policy(&sft, &RewardSpec::new(shifted, beta).unwrap()).unwrap().probs();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rouge_is_bounded_and_symmetric(a in prop::collection::vec(word(), 0..10), b in prop::collection::vec(word(), 0..10)) {
        let (a, b) = (a.join(" "), b.join(" "));
        let f = rouge_l_f1(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((f - rouge_l_f1(&b, &a)).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn index_round_trips(text in corpus(), seed in any::<u64>()) {
        let index = small_index(&text, seed);
        prop_assert!(index.validate().is_ok());
        let (_, bytes) = to_bytes(&index).unwrap();
        let (_, back) = from_bytes(&bytes).unwrap();
        prop_assert_eq!(back, index);
    }

    #[test]
    fn contexts_nest(text in corpus(), query in prop::collection::vec(word(), 1..6), k in 1usize..12) {
        let index = small_index(&text, 0);
        let m = MockBackend::default();
        let r = rank(&index, &query.join(" "), k, &m).unwrap();
        let ctx = build_contexts(&r, &index).unwrap();
        prop_assert_eq!(ctx.len(), r.len());
        for w in ctx.windows(2) {
            prop_assert!(w[1].starts_with(&w[0]) && w[1].len() == w[0].len() + 1);
        }
    }

    #[test]
    fn ranking_is_stable_under_top_deletion(text in corpus(), query in prop::collection::vec(word(), 1..6), k in 2usize..10) {
        let index = small_index(&text, 0);
        let m = MockBackend::default();
        let e_q = strata::backends::Embedder::embed(&m, &query.join(" ")).unwrap();
        let before = rank_embedding(&index, &e_q, k, ).unwrap();
        let scores: Vec<f64> = before.entries.iter().map(|e| e.score).collect();
        prop_assume!(index.node_count() > k && scores.windows(2).all(|w| w[0] > w[1]));
        let top = &before.entries[0];
        let mut pruned = index.clone();
        let layer = &mut pruned.layers[top.layer_index];
        let pos = layer.node_ids.iter().position(|&id| id == top.chunk_id).unwrap();
        layer.node_ids.remove(pos);
        layer.embeddings.remove(pos);
        prop_assume!(pruned.node_count() > 0);
        let after: RetrievalResult = rank_embedding(&pruned, &e_q, k - 1).unwrap();
        prop_assert_eq!(&after.entries[..], &before.entries[1..]);
    }
}
