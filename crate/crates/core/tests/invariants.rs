//! Structural invariants of a forward pass on small random graphs.

use ahead::aggregate::view_weights;
use ahead::decode::{self, anomaly_probability, LossNorm, Reconstruction, ScoreWeights};
use ahead::encoder::{self, enumerate_view_combinations};
use ahead::preprocess::ViewPartition;
use ahead::train::{self, forward_loss, init_params, tiny_fixture};
use ahead::HetGraph;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn forward(g: &HetGraph, seed: u64) -> (train::ForwardOutput, ahead::params::ModelParams, train::ModelConfig) {
    let (_, cfg) = tiny_fixture(0);
    let part = ViewPartition::of(g);
    let p = init_params(g, &part, &cfg, seed).unwrap();
    (forward_loss(g, &part, &p, &cfg).unwrap(), p, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn edge_attention_normalizes_per_target(graph_seed in 0u64..1000, param_seed in 0u64..1000) {
        let (g, cfg) = tiny_fixture(graph_seed);
        let part = ViewPartition::of(&g);
        let p = init_params(&g, &part, &cfg, param_seed).unwrap();
        let combo = &enumerate_view_combinations(&g)[0];
        let mut h = encoder::project_inputs(&g, &part, combo, &p).unwrap();
        for layer in 0..cfg.encoder.depth {
            let att = encoder::edge_attention(&g, &p, &cfg.encoder, &h, layer).unwrap();
            for (t, edges) in att.iter().enumerate() {
                for v in 0..g.node_types[t].num_nodes {
                    for head in 0..cfg.encoder.heads {
                        let into: Vec<f64> = edges.iter().filter(|e| e.dst == v).map(|e| e.weights[head]).collect();
                        if !into.is_empty() {
                            prop_assert!((into.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                        }
                    }
                }
            }
            h = encoder::layer_forward(&g, &p, &cfg.encoder, &h, layer).unwrap();
        }
    }

    #[test]
    fn view_weights_lie_on_the_simplex(alpha in proptest::collection::vec(-30.0f64..30.0, 1..12)) {
        let w = view_weights(&alpha);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstructions_stay_in_range(graph_seed in 0u64..1000, param_seed in 0u64..1000) {
        let (g, _) = tiny_fixture(graph_seed);
        let (out, _, _) = forward(&g, param_seed);
        let w = &out.embeddings.weights;
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (_, a) in &out.reconstruction.adj {
            prop_assert!(a.iter().all(|&x| x > 0.0 && x < 1.0));
        }
        for row in out.reconstruction.node_types.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        for x in &out.reconstruction.attrs {
            prop_assert!(x.iter().all(|&v| v >= 0.0));
        }
        let l = out.loss;
        prop_assert!(l.total >= 0.0 && l.attribute >= 0.0 && l.structure >= 0.0 && l.node_type >= 0.0);
    }

    #[test]
    fn probabilities_ignore_positive_scaling(
        scores in proptest::collection::vec(0.0f64..100.0, 1..30),
        c in 1e-3f64..1e3,
    ) {
        prop_assume!(scores.iter().any(|&s| s > 0.0));
        let p = anomaly_probability(&scores);
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        let q = anomaly_probability(&scaled);
        prop_assert!((p.iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_order_does_not_matter(graph_seed in 0u64..1000, shuffle_seed in any::<u64>()) {
        let (g, _) = tiny_fixture(graph_seed);
        let mut h = g.clone();
        let mut rng = ahead::rng::seeded(shuffle_seed, 0);
        for r in g.declared_relations().collect::<Vec<_>>() {
            let mut e = g.edges[r].clone();
            e.shuffle(&mut rng);
            h.set_edges(r, e).unwrap();
        }
        let (a, pa, cfg) = forward(&g, 3);
        let (b, _, _) = forward(&h, 3);
        prop_assert!((a.loss.total - b.loss.total).abs() < 1e-9);
        let sa = decode::anomaly_score(&g, &a.reconstruction, ScoreWeights::default()).unwrap();
        let sb = decode::anomaly_score(&h, &b.reconstruction, ScoreWeights::default()).unwrap();
        for (x, y) in sa.iter().zip(&sb) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let part = ViewPartition::of(&g);
        let (_, ga) = train::loss_and_gradients(&g, &part, &pa, &cfg).unwrap();
        let (_, gb) = train::loss_and_gradients(&h, &part, &pa, &cfg).unwrap();
        for (k, (x, y)) in ga.iter().zip(gb.iter()).enumerate() {
            for (u, v) in x.iter().zip(y.iter()) {
                prop_assert!((u - v).abs() < 1e-9, "gradient {}", k);
            }
        }
    }
}

#[test]
fn losses_vanish_on_perfect_reconstruction() {
    let (g, _) = tiny_fixture(1);
    let perfect = Reconstruction {
        adj: g.declared_relations().map(|r| (r, g.dense_adjacency(r))).collect(),
        attrs: g.attrs.clone(),
        node_types: decode::node_type_onehot(&g),
    };
    assert_eq!(decode::structure_loss(&g, &perfect, LossNorm::Squared), 0.0);
    assert_eq!(decode::attribute_loss(&g, &perfect, LossNorm::Squared), 0.0);
    let t = decode::node_type_onehot(&g);
    assert_eq!(decode::node_type_loss(&t, &perfect.node_types, LossNorm::Squared), 0.0);
    // The smoothed norm bottoms out at sqrt(1e-12) per term.
    let n_rel = g.declared_relations().count() as f64;
    assert!(decode::structure_loss(&g, &perfect, LossNorm::Frobenius) <= n_rel * 1e-6 * (1.0 + 1e-9));
    assert!(decode::attribute_loss(&g, &perfect, LossNorm::Frobenius) <= g.num_types() as f64 * 1e-6 * (1.0 + 1e-9));
    let scores = decode::anomaly_score(&g, &perfect, ScoreWeights::default()).unwrap();
    assert!(scores.iter().all(|&s| s == 0.0));
}
