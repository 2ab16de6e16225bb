//! Attribute views and optional column standardization.

use std::collections::BTreeMap;

use ndarray::Axis;
use rand::seq::SliceRandom;

use crate::error::{AheadError, Result};
use crate::hetgraph::{HetGraph, Matrix};
use crate::rng::seeded;

const SPLIT_STREAM: u64 = 0x5b11;

/// Per node type, the attribute columns of each view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewPartition {
    pub columns: Vec<Vec<Vec<usize>>>,
    /// Seed of the split that produced this partition, if any.
    pub seed: Option<u64>,
}

impl ViewPartition {
    /// The partition currently recorded in the graph schema.
    pub fn of(g: &HetGraph) -> Self {
        ViewPartition {
            columns: g.node_types.iter().map(|t| t.view_columns.clone()).collect(),
            seed: None,
        }
    }

    pub fn num_views(&self, ty: usize) -> usize {
        self.columns[ty].len()
    }

    /// Copy of `g` whose schema records this partition.
    pub fn apply(&self, g: &HetGraph) -> Result<HetGraph> {
        if self.columns.len() != g.num_types() {
            return Err(AheadError::Config(format!(
                "partition covers {} node types, graph has {}",
                self.columns.len(),
                g.num_types()
            )));
        }
        let mut out = g.clone();
        for (t, cols) in out.node_types.iter_mut().zip(&self.columns) {
            t.view_dims = cols.iter().map(Vec::len).collect();
            t.view_columns = cols.clone();
        }
        let violations = crate::hetgraph::validate_graph(&out);
        if !violations.is_empty() {
            return Err(AheadError::InvalidGraph(violations));
        }
        Ok(out)
    }
}

/// Randomly splits each listed node type's columns into `k` near-equal views:
/// a seeded column permutation cut into contiguous chunks whose sizes differ
/// by at most one. Types absent from `views_per_type` keep their views.
pub fn split_views(
    g: &HetGraph,
    views_per_type: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<ViewPartition> {
    for name in views_per_type.keys() {
        if g.type_index(name).is_none() {
            return Err(AheadError::Config(format!("unknown node type '{name}'")));
        }
    }
    let mut rng = seeded(seed, SPLIT_STREAM);
    let mut columns = Vec::with_capacity(g.num_types());
    for t in &g.node_types {
        let Some(&k) = views_per_type.get(&t.name) else {
            columns.push(t.view_columns.clone());
            continue;
        };
        if k == 0 || k > t.attr_dim {
            return Err(AheadError::Config(format!(
                "node type '{}': cannot split {} columns into {k} views",
                t.name, t.attr_dim
            )));
        }
        let mut perm: Vec<usize> = (0..t.attr_dim).collect();
        perm.shuffle(&mut rng);
        let (base, extra) = (t.attr_dim / k, t.attr_dim % k);
        let mut views = Vec::with_capacity(k);
        let mut start = 0;
        for v in 0..k {
            let len = base + usize::from(v < extra);
            views.push(perm[start..start + len].to_vec());
            start += len;
        }
        columns.push(views);
    }
    Ok(ViewPartition {
        columns,
        seed: Some(seed),
    })
}

/// Columns of one view of one node type, gathered in partition order.
pub fn view_slice(g: &HetGraph, p: &ViewPartition, ty: usize, view: usize) -> Result<Matrix> {
    let cols = p
        .columns
        .get(ty)
        .and_then(|v| v.get(view))
        .ok_or_else(|| AheadError::Config(format!("no view {view} for node type index {ty}")))?;
    let x = &g.attrs[ty];
    if let Some(&c) = cols.iter().find(|&&c| c >= x.ncols()) {
        return Err(AheadError::Config(format!("view column {c} out of range")));
    }
    Ok(x.select(Axis(1), cols))
}

/// Rescales every attribute column to mean 0 and sample standard deviation 1.
/// Columns whose standard deviation is below `1e-12` become all zeros.
pub fn standardize(g: &HetGraph) -> HetGraph {
    let mut out = g.clone();
    for x in &mut out.attrs {
        let n = x.nrows() as f64;
        for mut col in x.columns_mut() {
            let mean = col.sum() / n;
            let var = if n > 1.0 {
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let std = var.sqrt();
            if std < 1e-12 {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - mean) / std);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::NodeTypeSpec;
    use ndarray::{array, Array2};

    fn graph_with_dims(dims: &[(usize, usize)]) -> HetGraph {
        let types = dims
            .iter()
            .enumerate()
            .map(|(i, &(n, d))| NodeTypeSpec::new(format!("t{i}"), n, vec![d]))
            .collect();
        let attrs = dims
            .iter()
            .map(|&(n, d)| Array2::from_shape_fn((n, d), |(i, j)| (i * 31 + j * 7) as f64 * 0.25))
            .collect();
        HetGraph::new(types, &[], attrs).unwrap()
    }

    fn views(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|&(n, k)| (n.to_string(), k)).collect()
    }

    #[test]
    fn equal_split() {
        let g = graph_with_dims(&[(2, 6)]);
        let p = split_views(&g, &views(&[("t0", 3)]), 11).unwrap();
        let sizes: Vec<_> = p.columns[0].iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 2]);
    }

    #[test]
    fn near_equal_split() {
        let g = graph_with_dims(&[(2, 7)]);
        let p = split_views(&g, &views(&[("t0", 2)]), 3).unwrap();
        let mut sizes: Vec<_> = p.columns[0].iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![3, 4]);
    }

    #[test]
    fn news_sized_split() {
        let g = graph_with_dims(&[(1, 1536)]);
        let p = split_views(&g, &views(&[("t0", 3)]), 0).unwrap();
        assert!(p.columns[0].iter().all(|v| v.len() == 512));
    }

    #[test]
    fn too_many_views_rejected() {
        let g = graph_with_dims(&[(2, 3)]);
        assert!(split_views(&g, &views(&[("t0", 4)]), 0).is_err());
        assert!(split_views(&g, &views(&[("nope", 1)]), 0).is_err());
    }

    #[test]
    fn split_is_deterministic_and_recorded() {
        let g = graph_with_dims(&[(3, 10), (2, 5)]);
        let v = views(&[("t0", 3), ("t1", 2)]);
        let a = split_views(&g, &v, 42).unwrap();
        assert_eq!(a, split_views(&g, &v, 42).unwrap());
        let applied = a.apply(&g).unwrap();
        assert_eq!(applied.node_types[0].num_views(), 3);
        assert_eq!(ViewPartition::of(&applied).columns, a.columns);
    }

    #[test]
    fn view_slice_gathers_columns() {
        let mut g = graph_with_dims(&[(2, 3)]);
        g.attrs[0] = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let p = ViewPartition {
            columns: vec![vec![vec![0, 2], vec![1]]],
            seed: None,
        };
        assert_eq!(view_slice(&g, &p, 0, 0).unwrap(), array![[1.0, 3.0], [4.0, 6.0]]);
        assert!(view_slice(&g, &p, 0, 2).is_err());
        assert!(view_slice(&g, &p, 1, 0).is_err());
    }

    #[test]
    fn single_view_is_permuted_full_matrix() {
        let g = graph_with_dims(&[(4, 5)]);
        let p = split_views(&g, &views(&[("t0", 1)]), 9).unwrap();
        let s = view_slice(&g, &p, 0, 0).unwrap();
        for (pos, &c) in p.columns[0][0].iter().enumerate() {
            assert_eq!(s.column(pos), g.attrs[0].column(c));
        }
    }

    #[test]
    fn standardize_column() {
        let mut g = graph_with_dims(&[(3, 2)]);
        g.attrs[0] = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let s = standardize(&g);
        assert_eq!(s.attrs[0], array![[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        let again = standardize(&s);
        for (a, b) in again.attrs[0].iter().zip(s.attrs[0].iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reassembly_inverts_partition(d in 1usize..40, k in 1usize..8, seed in any::<u64>()) {
                prop_assume!(k <= d);
                let g = graph_with_dims(&[(3, d)]);
                let p = split_views(&g, &views(&[("t0", k)]), seed).unwrap();
                let sizes: Vec<_> = p.columns[0].iter().map(Vec::len).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                let mut rebuilt = Matrix::zeros((3, d));
                for v in 0..k {
                    let s = view_slice(&g, &p, 0, v).unwrap();
                    for (pos, &c) in p.columns[0][v].iter().enumerate() {
                        rebuilt.column_mut(c).assign(&s.column(pos));
                    }
                }
                prop_assert_eq!(rebuilt, g.attrs[0].clone());
            }
        }
    }
}
