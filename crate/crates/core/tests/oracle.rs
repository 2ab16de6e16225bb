//! Library routines against independent scalar-by-scalar recomputations on
//! hand-sized graphs with hand-set parameters.

mod common;

use ahead::decode::{self, Reconstruction, ScoreWeights};
use ahead::encoder::AttnScale;
use ahead::metrics::auc;
use common::{check_layer, toy, TOL};
use ndarray::array;

#[test]
fn layer_forward_two_nodes_one_edge() {
    let g = toy(1, &[(0, 0)]);
    check_layer(&g, 1, AttnScale::Overall);
    check_layer(&g, 2, AttnScale::Overall);
    check_layer(&g, 2, AttnScale::PerHead);
}

#[test]
fn layer_forward_with_competing_edges() {
    // Node b receives two edges, so the softmax is not trivial; a2 is isolated.
    let g = toy(3, &[(0, 0), (1, 0)]);
    check_layer(&g, 1, AttnScale::Overall);
    check_layer(&g, 2, AttnScale::PerHead);
}

#[test]
fn reconstruct_structure_two_nodes() {
    let g = toy(1, &[(0, 0)]);
    let z = vec![array![[0.3, -1.2, 0.5]], array![[0.7, 0.4, -2.0]]];
    let got = decode::reconstruct_structure(&z, &g);
    assert_eq!(got.len(), 1, "only the declared relation is reconstructed");
    let dot: f64 = 0.3 * 0.7 + -1.2 * 0.4 + 0.5 * -2.0;
    let want = 1.0 / (1.0 + (-dot).exp());
    assert_eq!(got[0].0, 0);
    assert!((got[0].1[[0, 0]] - want).abs() <= TOL);
}

#[test]
fn anomaly_score_two_nodes() {
    let g = toy(1, &[(0, 0)]);
    let recon = Reconstruction {
        adj: vec![(0, array![[0.3]])],
        attrs: vec![array![[0.0, 0.5]], array![[1.0, -1.0]]],
        node_types: array![[0.6, 0.4], [0.1, 0.9]],
    };
    let (xa, xb) = (g.attrs[0].row(0).to_vec(), g.attrs[1].row(0).to_vec());
    let attr_a = ((xa[0] - 0.0).powi(2) + (xa[1] - 0.5).powi(2)).sqrt();
    let attr_b = ((xb[0] - 1.0).powi(2) + (xb[1] + 1.0).powi(2)).sqrt();
    let type_a = (0.4f64 * 0.4 + 0.4 * 0.4).sqrt();
    let type_b = (0.1f64 * 0.1 + 0.1 * 0.1).sqrt();
    // Node a owns the row of the single entry, node b its column.
    let s_a = 0.4 * 0.7 + 0.4 * attr_a + 0.2 * type_a;
    let s_b = 0.4 * 0.7 + 0.4 * attr_b + 0.2 * type_b;
    let got = decode::anomaly_score(&g, &recon, ScoreWeights::default()).unwrap();
    assert!((got[0] - s_a).abs() <= TOL, "{} vs {s_a}", got[0]);
    assert!((got[1] - s_b).abs() <= TOL, "{} vs {s_b}", got[1]);

    let w = ScoreWeights {
        lambda1: 0.1,
        lambda2: 0.7,
    };
    let got = decode::anomaly_score(&g, &recon, w).unwrap();
    let s_a = 0.1 * 0.7 + 0.7 * attr_a + 0.2 * type_a;
    assert!((got[0] - s_a).abs() <= TOL);
}

#[test]
fn auc_against_pair_counting() {
    let cases: [(&[f64], &[bool]); 4] = [
        (&[0.9, 0.2], &[true, false]),
        (&[0.2, 0.9], &[true, false]),
        (&[3.0, 1.0, 2.0], &[true, false, true]),
        (&[0.5, 0.5, 0.1, 0.7], &[true, false, false, true]),
    ];
    for (scores, labels) in cases {
        let (mut hits, mut pairs) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        hits += 1.0;
                    } else if scores[i] == scores[j] {
                        hits += 0.5;
                    }
                }
            }
        }
        assert!((auc(scores, labels).unwrap() - hits / pairs).abs() <= TOL);
    }
    // Last case by hand: pairs (0.5,0.5)=½, (0.5,0.1)=1, (0.7,0.5)=1, (0.7,0.1)=1.
    assert!((auc(&[0.5, 0.5, 0.1, 0.7], &[true, false, false, true]).unwrap() - 0.875).abs() <= TOL);
}
