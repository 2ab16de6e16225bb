//! View-level attention aggregator.
//!
//! Each combination's final hidden states are projected to the output
//! dimension by `Out-Linear` and mixed with weights `softmax(α)`.

use serde::{Deserialize, Serialize};

use crate::error::{AheadError, Result};
use crate::hetgraph::{HetGraph, Matrix};
use crate::params::{Bound, ModelParams};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutProjection {
    /// One projection for every node type and combination.
    #[default]
    Shared,
    PerType,
}

pub mod paths {
    pub const OUT_WEIGHT: &str = "aggregate.out.weight";
    pub const OUT_BIAS: &str = "aggregate.out.bias";
    pub const ALPHA: &str = "aggregate.alpha";
    pub fn out_weight_for(ty: &str) -> String {
        format!("aggregate.out.type:{ty}.weight")
    }
    pub fn out_bias_for(ty: &str) -> String {
        format!("aggregate.out.type:{ty}.bias")
    }
}

/// Per-combination and aggregated latent representations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// `per_combination[k][type]` is `Z⁽ᵏ⁾` for that node type.
    pub per_combination: Vec<Vec<Matrix>>,
    /// Aggregated `Z` per node type.
    pub aggregated: Vec<Matrix>,
    /// View-level attention weights, one per combination.
    pub weights: Vec<f64>,
}

pub fn init_aggregator(
    g: &HetGraph,
    hidden_dim: usize,
    out_dim: usize,
    num_combinations: usize,
    mode: OutProjection,
    rng: &mut impl rand::Rng,
    params: &mut ModelParams,
) {
    match mode {
        OutProjection::Shared => {
            params.insert(paths::OUT_WEIGHT, crate::encoder::glorot(rng, hidden_dim, out_dim));
            params.insert(paths::OUT_BIAS, Matrix::zeros((1, out_dim)));
        }
        OutProjection::PerType => {
            for t in &g.node_types {
                params.insert(
                    paths::out_weight_for(&t.name),
                    crate::encoder::glorot(rng, hidden_dim, out_dim),
                );
                params.insert(paths::out_bias_for(&t.name), Matrix::zeros((1, out_dim)));
            }
        }
    }
    params.insert(paths::ALPHA, Matrix::zeros((1, num_combinations)));
}

pub(crate) fn out_project_on(
    tape: &mut Tape,
    hidden: &[Var],
    type_names: &[String],
    mode: OutProjection,
    bound: &Bound,
) -> Result<Vec<Var>> {
    hidden
        .iter()
        .zip(type_names)
        .map(|(&h, name)| {
            let (w, b) = match mode {
                OutProjection::Shared => (bound.var(paths::OUT_WEIGHT)?, bound.var(paths::OUT_BIAS)?),
                OutProjection::PerType => (
                    bound.var(&paths::out_weight_for(name))?,
                    bound.var(&paths::out_bias_for(name))?,
                ),
            };
            if tape.value(w).nrows() != tape.value(h).ncols() {
                return Err(AheadError::Model(format!(
                    "Out-Linear expects {} inputs, hidden state has {}",
                    tape.value(w).nrows(),
                    tape.value(h).ncols()
                )));
            }
            let y = tape.matmul(h, w);
            Ok(tape.add_row(y, b))
        })
        .collect()
}

/// `1 × K` softmax of the view logits.
pub(crate) fn view_weights_on(tape: &mut Tape, bound: &Bound) -> Result<Var> {
    let alpha = bound.var(paths::ALPHA)?;
    Ok(tape.softmax_rows(alpha))
}

/// `Z[type] = Σ_k W_v[k] · Z⁽ᵏ⁾[type]`.
pub(crate) fn aggregate_on(tape: &mut Tape, per_combination: &[Vec<Var>], weights: Var) -> Result<Vec<Var>> {
    let k = per_combination.len();
    if k == 0 || tape.value(weights).ncols() != k {
        return Err(AheadError::Config(format!(
            "{k} combinations but {} view weights",
            tape.value(weights).ncols()
        )));
    }
    let nt = per_combination[0].len();
    let mut out = Vec::with_capacity(nt);
    for ty in 0..nt {
        let mut acc = tape.scale_by(per_combination[0][ty], weights, (0, 0));
        for (c, zs) in per_combination.iter().enumerate().skip(1) {
            let term = tape.scale_by(zs[ty], weights, (0, c));
            acc = tape.add(acc, term);
        }
        out.push(acc);
    }
    Ok(out)
}

// Plain-matrix entry points.

/// `Z⁽ᵏ⁾ = Out-Linear(H⁽ᴸ⁾)` for every combination.
pub fn out_project(
    hidden: &[Vec<Matrix>],
    type_names: &[String],
    mode: OutProjection,
    params: &ModelParams,
) -> Result<Vec<Vec<Matrix>>> {
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    hidden
        .iter()
        .map(|hs| {
            let vars: Vec<Var> = hs.iter().map(|m| tape.constant(m.clone())).collect();
            let z = out_project_on(&mut tape, &vars, type_names, mode, &bound)?;
            Ok(z.iter().map(|&v| tape.value(v).clone()).collect())
        })
        .collect()
}

/// `softmax(α)`.
pub fn view_weights(alpha: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(Matrix::from_shape_vec((1, alpha.len()), alpha.to_vec()).expect("row"));
    let w = tape.softmax_rows(a);
    tape.value(w).iter().copied().collect()
}

pub fn aggregate(per_combination: &[Vec<Matrix>], weights: &[f64]) -> Result<Vec<Matrix>> {
    let mut tape = Tape::new();
    let zs: Vec<Vec<Var>> = per_combination
        .iter()
        .map(|c| c.iter().map(|m| tape.constant(m.clone())).collect())
        .collect();
    let w = tape.constant(Matrix::from_shape_vec((1, weights.len()), weights.to_vec()).expect("row"));
    let out = aggregate_on(&mut tape, &zs, w)?;
    Ok(out.iter().map(|&v| tape.value(v).clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_and_saturated_weights() {
        let w = view_weights(&[0.0; 6]);
        assert!(w.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
        let w = view_weights(&[10.0, -10.0]);
        assert!(w[0] > 1.0 - 1e-8 && w[1] < 1e-8);
        assert_eq!(view_weights(&[3.7]), vec![1.0]);
    }

    #[test]
    fn aggregate_cases() {
        let z = array![[1.0, 2.0], [3.0, 4.0]];
        let same = aggregate(&[vec![z.clone()], vec![z.clone()]], &[0.5, 0.5]).unwrap();
        assert_eq!(same[0], z);
        let other = array![[9.0, 9.0], [9.0, 9.0]];
        let first = aggregate(&[vec![z.clone()], vec![other]], &[1.0, 0.0]).unwrap();
        assert_eq!(first[0], z);
        assert!(aggregate(&[vec![z.clone()]], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn aggregate_matches_explicit_weighted_sum() {
        let zs: Vec<Vec<Matrix>> = (0..3)
            .map(|k| {
                vec![
                    Matrix::from_shape_fn((2, 3), |(i, j)| ((k * 7 + i * 3 + j) as f64).sin()),
                    Matrix::from_shape_fn((1, 3), |(_, j)| (k as f64 - j as f64) * 0.3),
                ]
            })
            .collect();
        let w = view_weights(&[0.2, -1.0, 0.7]);
        let got = aggregate(&zs, &w).unwrap();
        for ty in 0..2 {
            let (r, c) = zs[0][ty].dim();
            for i in 0..r {
                for j in 0..c {
                    let mut expected = 0.0;
                    for k in 0..3 {
                        expected += w[k] * zs[k][ty][[i, j]];
                    }
                    assert!((got[ty][[i, j]] - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn out_project_zero_and_identity() {
        let names = vec!["a".to_string()];
        let mut p = ModelParams::new();
        p.insert(paths::OUT_WEIGHT, Matrix::zeros((4, 2)));
        p.insert(paths::OUT_BIAS, Matrix::zeros((1, 2)));
        let h = vec![vec![array![[1.0, 2.0, 3.0, 4.0]]]];
        let z = out_project(&h, &names, OutProjection::Shared, &p).unwrap();
        assert_eq!(z[0][0], array![[0.0, 0.0]]);

        let mut p = ModelParams::new();
        p.insert(paths::OUT_WEIGHT, array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]]);
        p.insert(paths::OUT_BIAS, Matrix::zeros((1, 2)));
        let z = out_project(&h, &names, OutProjection::Shared, &p).unwrap();
        assert_eq!(z[0][0], array![[1.0, 2.0]]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn weights_lie_on_simplex(alpha in proptest::collection::vec(-30.0f64..30.0, 1..10)) {
                let w = view_weights(&alpha);
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }

            #[test]
            fn permutation_equivariance(seed in 0u64..1000) {
                let k = 4;
                let zs: Vec<Vec<Matrix>> = (0..k)
                    .map(|c| vec![Matrix::from_shape_fn((2, 2), |(i, j)| ((seed + c as u64 * 5 + i as u64 * 2 + j as u64) as f64).cos())])
                    .collect();
                let w = view_weights(&[0.3, -0.2, 1.1, 0.0]);
                let perm = [2usize, 0, 3, 1];
                let zp: Vec<_> = perm.iter().map(|&p| zs[p].clone()).collect();
                let wp: Vec<_> = perm.iter().map(|&p| w[p]).collect();
                let a = aggregate(&zs, &w).unwrap();
                let b = aggregate(&zp, &wp).unwrap();
                for (x, y) in a[0].iter().zip(b[0].iter()) {
                    prop_assert!((x - y).abs() < 1e-14);
                }
            }
        }
    }
}
