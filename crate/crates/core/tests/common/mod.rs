#![allow(dead_code)]

//! Independent scalar recomputations shared by the oracle tests and the
//! acceptance harness.

use ahead::encoder::{self, paths, AttnScale, EncoderConfig};
use ahead::hetgraph::{HetGraph, Matrix, NodeTypeSpec};
use ahead::params::ModelParams;

pub const TOL: f64 = 1e-12;

/// Deterministic, irregular entries in roughly [-0.8, 0.8].
pub fn filled(rows: usize, cols: usize, salt: usize) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |(i, j)| {
        let k = salt * 31 + i * 7 + j * 3 + 1;
        ((k * 37 % 17) as f64 - 8.0) / 10.0
    })
}

/// Two node types `a` and `b`, relation `r: a → b` with the given edges.
pub fn toy(n_a: usize, edges: &[(usize, usize)]) -> HetGraph {
    let types = vec![NodeTypeSpec::new("a", n_a, vec![2]), NodeTypeSpec::new("b", 1, vec![2])];
    let attrs = vec![filled(n_a, 2, 90), filled(1, 2, 91)];
    let mut g = HetGraph::new(types, &[("r", "a", "b")], attrs).unwrap();
    g.set_edges(0, edges.to_vec()).unwrap();
    g
}

pub fn hand_params(g: &HetGraph, cfg: &EncoderConfig) -> ModelParams {
    let (h1, dh) = (cfg.hidden_dim, cfg.head_dim());
    let mut p = ModelParams::new();
    let mut salt = 0;
    let mut next = |rows, cols| {
        salt += 1;
        filled(rows, cols, salt)
    };
    for t in &g.node_types {
        for which in ['K', 'Q', 'M'] {
            for i in 0..cfg.heads {
                p.insert(paths::proj_weight(0, &t.name, which, i), next(h1, dh));
                p.insert(paths::proj_bias(0, &t.name, which, i), next(1, dh));
            }
        }
        p.insert(paths::out_weight(0, &t.name), next(h1, h1));
        p.insert(paths::out_bias(0, &t.name), next(1, h1));
    }
    for r in &g.relations {
        for i in 0..cfg.heads {
            p.insert(paths::w_att(0, &r.name, i), next(dh, dh));
            p.insert(paths::w_mes(0, &r.name, i), next(dh, dh));
        }
    }
    let na = g.num_types();
    p.insert(
        paths::MU,
        Matrix::from_shape_fn((na, g.relations.len() * na), |(i, j)| 0.5 + 0.25 * (i + 2 * j) as f64),
    );
    p
}

/// `x W + b` for one row, written as explicit sums.
pub fn affine(x: &[f64], w: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..w.ncols())
        .map(|j| {
            let mut s = b[[0, j]];
            for (i, xi) in x.iter().enumerate() {
                s += xi * w[[i, j]];
            }
            s
        })
        .collect()
}

pub fn vec_mat(x: &[f64], w: &Matrix) -> Vec<f64> {
    (0..w.ncols())
        .map(|j| x.iter().enumerate().map(|(i, xi)| xi * w[[i, j]]).sum())
        .collect()
}

/// One layer, one node at a time, one edge at a time.
pub fn oracle_layer(g: &HetGraph, p: &ModelParams, cfg: &EncoderConfig, h: &[Matrix]) -> Vec<Matrix> {
    let na = g.num_types();
    let divisor = match cfg.attn_scale {
        AttnScale::Overall => (cfg.hidden_dim as f64).sqrt(),
        AttnScale::PerHead => (cfg.head_dim() as f64).sqrt(),
    };
    let row = |t: usize, i: usize| h[t].row(i).to_vec();
    let mut out = Vec::new();
    for (t, spec) in g.node_types.iter().enumerate() {
        let mut next = Matrix::zeros((spec.num_nodes, cfg.hidden_dim));
        for v in 0..spec.num_nodes {
            let mut tilde = Vec::new();
            for head in 0..cfg.heads {
                let q = affine(
                    &row(t, v),
                    p.get(&paths::proj_weight(0, &spec.name, 'Q', head)).unwrap(),
                    p.get(&paths::proj_bias(0, &spec.name, 'Q', head)).unwrap(),
                );
                // (score, message) for every edge ending at v.
                let mut incoming: Vec<(f64, Vec<f64>)> = Vec::new();
                for (r, rel) in g.relations.iter().enumerate() {
                    let s_ty = g.type_index(&rel.src_type).unwrap();
                    if g.type_index(&rel.dst_type).unwrap() != t {
                        continue;
                    }
                    let s_name = &g.node_types[s_ty].name;
                    for &(src, dst) in &g.edges[r] {
                        if dst != v {
                            continue;
                        }
                        let k = affine(
                            &row(s_ty, src),
                            p.get(&paths::proj_weight(0, s_name, 'K', head)).unwrap(),
                            p.get(&paths::proj_bias(0, s_name, 'K', head)).unwrap(),
                        );
                        let kw = vec_mat(&k, p.get(&paths::w_att(0, &rel.name, head)).unwrap());
                        let dot: f64 = kw.iter().zip(&q).map(|(a, b)| a * b).sum();
                        let mu = p.get(paths::MU).unwrap()[[s_ty, r * na + t]];
                        let m = affine(
                            &row(s_ty, src),
                            p.get(&paths::proj_weight(0, s_name, 'M', head)).unwrap(),
                            p.get(&paths::proj_bias(0, s_name, 'M', head)).unwrap(),
                        );
                        let msg = vec_mat(&m, p.get(&paths::w_mes(0, &rel.name, head)).unwrap());
                        incoming.push((dot * mu / divisor, msg));
                    }
                }
                let mut agg = vec![0.0; cfg.head_dim()];
                if !incoming.is_empty() {
                    let max = incoming.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = incoming.iter().map(|e| (e.0 - max).exp()).sum();
                    for (score, msg) in &incoming {
                        let w = (score - max).exp() / z;
                        for (a, m) in agg.iter_mut().zip(msg) {
                            *a += w * m;
                        }
                    }
                }
                tilde.extend(agg);
            }
            let lin = affine(
                &tilde,
                p.get(&paths::out_weight(0, &spec.name)).unwrap(),
                p.get(&paths::out_bias(0, &spec.name)).unwrap(),
            );
            for (j, x) in lin.iter().enumerate() {
                next[[v, j]] = x.max(0.0) + h[t][[v, j]];
            }
        }
        out.push(next);
    }
    out
}

/// Largest absolute gap between `layer_forward` and the scalar oracle.
pub fn layer_error(g: &HetGraph, heads: usize, scale: AttnScale) -> f64 {
    let cfg = EncoderConfig {
        hidden_dim: 2,
        out_dim: 2,
        heads,
        depth: 1,
        attn_scale: scale,
    };
    let p = hand_params(g, &cfg);
    let h: Vec<Matrix> = g
        .node_types
        .iter()
        .enumerate()
        .map(|(t, spec)| filled(spec.num_nodes, 2, 50 + t))
        .collect();
    let got = encoder::layer_forward(g, &p, &cfg, &h, 0).unwrap();
    let want = oracle_layer(g, &p, &cfg, &h);
    let mut worst = 0.0_f64;
    for (a, b) in got.iter().zip(&want) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

pub fn check_layer(g: &HetGraph, heads: usize, scale: AttnScale) {
    let err = layer_error(g, heads, scale);
    assert!(err <= TOL, "layer differs from oracle by {err}");
}
