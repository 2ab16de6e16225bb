//! Ground-truth anomaly injection.
//!
//! Attribute anomalies: a target node takes the attributes of the most
//! distant of `k` randomly drawn same-type nodes. Structural anomalies:
//! groups of `m` nodes are fully connected under one relation. For a relation
//! between two node types the group is split `⌈m/2⌉` source / `⌊m/2⌋`
//! destination nodes and becomes a complete bipartite subgraph.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{AheadError, Result};
use crate::hetgraph::{validate_graph, AnomalyKind, HetGraph, Labels, NodeLabel};
use crate::rng::seeded;

const ATTR_STREAM: u64 = 0xa771;
const STRUCT_STREAM: u64 = 0x57c7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionConfig {
    /// Attribute-anomaly targets per node type name.
    pub attr_n: BTreeMap<String, usize>,
    /// Candidate pool size drawn for each attribute target.
    pub attr_k: usize,
    /// Nodes per structural cluster.
    pub struct_m: usize,
    /// Number of structural clusters.
    pub struct_c: usize,
    /// Relation receiving the cluster edges; required when `struct_c > 0`.
    pub struct_relation: Option<String>,
    pub seed: u64,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        InjectionConfig {
            attr_n: BTreeMap::new(),
            attr_k: 50,
            struct_m: 15,
            struct_c: 0,
            struct_relation: None,
            seed: 0,
        }
    }
}

impl InjectionConfig {
    /// Same configuration with every count multiplied by `factor`.
    pub fn scaled(&self, factor: usize) -> Self {
        let mut out = self.clone();
        for n in out.attr_n.values_mut() {
            *n *= factor;
        }
        out.struct_c *= factor;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub node_type: String,
    pub node: usize,
    /// Node whose attributes were copied onto `node`.
    pub source: usize,
    pub squared_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueRecord {
    pub relation: String,
    pub src_nodes: Vec<usize>,
    pub dst_nodes: Vec<usize>,
    pub edges_added: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub attribute: Vec<AttributeRecord>,
    pub cliques: Vec<CliqueRecord>,
}

impl InjectionReport {
    pub fn num_structural(&self) -> usize {
        self.cliques
            .iter()
            .map(|c| c.src_nodes.len() + c.dst_nodes.len())
            .sum()
    }
}

fn unlabeled(labels: &Labels, ty: usize) -> Vec<usize> {
    labels[ty]
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.is_anomaly)
        .map(|(i, _)| i)
        .collect()
}

/// Replaces the attributes of `attr_n[type]` unlabeled nodes per type.
/// Distances are measured on the attributes as they were before injection.
pub fn inject_attribute_anomalies(
    g: &HetGraph,
    cfg: &InjectionConfig,
) -> Result<(HetGraph, InjectionReport)> {
    if cfg.attr_k == 0 {
        return Err(AheadError::Config("attr_k must be at least 1".into()));
    }
    if let Some(name) = cfg.attr_n.keys().find(|n| g.type_index(n).is_none()) {
        return Err(AheadError::Config(format!("attr_n names unknown node type '{name}'")));
    }
    let mut out = g.clone();
    let mut labels = g.labels_or_normal();
    let mut report = InjectionReport::default();
    let mut rng = seeded(cfg.seed, ATTR_STREAM);

    for (ty, spec) in g.node_types.iter().enumerate() {
        let n = cfg.attr_n.get(&spec.name).copied().unwrap_or(0);
        if n == 0 {
            continue;
        }
        let na = spec.num_nodes;
        if n + cfg.attr_k > na {
            return Err(AheadError::Config(format!(
                "node type '{}': {n} targets plus a pool of {} exceed {na} nodes",
                spec.name, cfg.attr_k
            )));
        }
        let free = unlabeled(&labels, ty);
        if free.len() < n {
            return Err(AheadError::Config(format!(
                "node type '{}': only {} unlabeled nodes for {n} attribute anomalies",
                spec.name,
                free.len()
            )));
        }
        let original = &g.attrs[ty];
        let targets: Vec<usize> = sample(&mut rng, free.len(), n)
            .into_iter()
            .map(|i| free[i])
            .collect();
        for i in targets {
            // Pool: k distinct nodes other than i.
            let pool = sample(&mut rng, na - 1, cfg.attr_k)
                .into_iter()
                .map(|j| if j >= i { j + 1 } else { j });
            let xi = original.row(i);
            let mut best: Option<(usize, f64)> = None;
            for j in pool {
                let d: f64 = xi
                    .iter()
                    .zip(original.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((j, d));
                }
            }
            let (j, d) = best.expect("pool is non-empty");
            out.attrs[ty].row_mut(i).assign(&original.row(j));
            labels[ty][i] = NodeLabel::anomaly(AnomalyKind::Attribute);
            report.attribute.push(AttributeRecord {
                node_type: spec.name.clone(),
                node: i,
                source: j,
                squared_distance: d,
            });
        }
    }
    out.labels = Some(labels);
    Ok((out, report))
}

/// Adds `struct_c` node-disjoint fully connected clusters of `struct_m`
/// unlabeled nodes under `struct_relation`.
pub fn inject_structural_anomalies(
    g: &HetGraph,
    cfg: &InjectionConfig,
) -> Result<(HetGraph, InjectionReport)> {
    let mut out = g.clone();
    let mut labels = g.labels_or_normal();
    let mut report = InjectionReport::default();
    if cfg.struct_c == 0 {
        out.labels = Some(labels);
        return Ok((out, report));
    }
    if cfg.struct_m < 2 {
        return Err(AheadError::Config("struct_m must be at least 2".into()));
    }
    let rel_name = cfg
        .struct_relation
        .as_deref()
        .ok_or_else(|| AheadError::Config("struct_relation is required for structural anomalies".into()))?;
    let rel = g
        .relation_index(rel_name)
        .filter(|&r| !g.relations[r].is_reverse())
        .ok_or_else(|| AheadError::Config(format!("unknown declared relation '{rel_name}'")))?;
    let (s, d) = g.endpoints(rel);
    let mut rng = seeded(cfg.seed, STRUCT_STREAM);

    for _ in 0..cfg.struct_c {
        let (n_src, n_dst) = if s == d {
            (cfg.struct_m, 0)
        } else {
            (cfg.struct_m.div_ceil(2), cfg.struct_m / 2)
        };
        let src_nodes = draw(&mut rng, &labels, g, s, n_src)?;
        for &i in &src_nodes {
            labels[s][i] = NodeLabel::anomaly(AnomalyKind::Structural);
        }
        let dst_nodes = draw(&mut rng, &labels, g, d, n_dst)?;
        for &j in &dst_nodes {
            labels[d][j] = NodeLabel::anomaly(AnomalyKind::Structural);
        }

        let pairs: Vec<(usize, usize)> = if s == d {
            src_nodes
                .iter()
                .flat_map(|&i| src_nodes.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
                .collect()
        } else {
            src_nodes
                .iter()
                .flat_map(|&i| dst_nodes.iter().map(move |&j| (i, j)))
                .collect()
        };
        let edges_added = out.add_edges(rel, pairs)?;
        report.cliques.push(CliqueRecord {
            relation: rel_name.to_string(),
            src_nodes,
            dst_nodes,
            edges_added,
        });
    }
    out.labels = Some(labels);
    Ok((out, report))
}

fn draw(
    rng: &mut impl rand::Rng,
    labels: &Labels,
    g: &HetGraph,
    ty: usize,
    count: usize,
) -> Result<Vec<usize>> {
    let free = unlabeled(labels, ty);
    if free.len() < count {
        return Err(AheadError::Config(format!(
            "node type '{}': only {} unlabeled nodes left for a cluster needing {count}",
            g.node_types[ty].name,
            free.len()
        )));
    }
    Ok(sample(rng, free.len(), count)
        .into_iter()
        .map(|i| free[i])
        .collect())
}

/// Attribute injection followed by structural injection on the remaining
/// unlabeled nodes.
pub fn inject(g: &HetGraph, cfg: &InjectionConfig) -> Result<(HetGraph, InjectionReport)> {
    let (after_attr, mut report) = inject_attribute_anomalies(g, cfg)?;
    let (out, structural) = inject_structural_anomalies(&after_attr, cfg)?;
    report.cliques = structural.cliques;
    let violations = validate_graph(&out);
    if !violations.is_empty() {
        return Err(AheadError::InvalidGraph(violations));
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{Matrix, NodeTypeSpec};
    use ndarray::array;

    fn news_source(n_news: usize, n_src: usize) -> HetGraph {
        let types = vec![
            NodeTypeSpec::new("N", n_news, vec![2]),
            NodeTypeSpec::new("S", n_src, vec![1]),
        ];
        let attrs = vec![
            Matrix::from_shape_fn((n_news, 2), |(i, j)| (i + j) as f64),
            Matrix::from_shape_fn((n_src, 1), |(i, _)| i as f64),
        ];
        let mut g = HetGraph::new(types, &[("publishes", "S", "N")], attrs).unwrap();
        g.set_edges(0, (0..n_news).map(|i| (i % n_src, i)).collect()).unwrap();
        g
    }

    fn attr_cfg(n: usize, k: usize, seed: u64) -> InjectionConfig {
        InjectionConfig {
            attr_n: [("N".to_string(), n)].into_iter().collect(),
            attr_k: k,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn farthest_pool_member_is_copied() {
        // Node 0 at the origin; the only other nodes sit at (1,0) and (3,4).
        let mut g = news_source(3, 1);
        g.attrs[0] = array![[0.0, 0.0], [1.0, 0.0], [3.0, 4.0]];
        let mut hit = false;
        for seed in 0..50 {
            let (out, report) = inject_attribute_anomalies(&g, &attr_cfg(1, 2, seed)).unwrap();
            let rec = &report.attribute[0];
            if rec.node == 0 {
                // Brute force over the pool {1, 2}.
                assert_eq!(rec.squared_distance, 25.0);
                assert_eq!(out.attrs[0].row(0), array![3.0, 4.0]);
                hit = true;
            }
        }
        assert!(hit, "node 0 was never selected");
    }

    #[test]
    fn singleton_pool_copies_regardless_of_distance() {
        let g = news_source(6, 2);
        let (out, report) = inject_attribute_anomalies(&g, &attr_cfg(2, 1, 7)).unwrap();
        for rec in &report.attribute {
            assert_ne!(rec.node, rec.source);
            assert_eq!(out.attrs[0].row(rec.node), g.attrs[0].row(rec.source));
        }
    }

    #[test]
    fn zero_targets_leave_graph_unchanged() {
        let g = news_source(6, 2);
        let (out, report) = inject(&g, &attr_cfg(0, 3, 1)).unwrap();
        assert_eq!(out.attrs, g.attrs);
        assert_eq!(out.edges, g.edges);
        assert!(report.attribute.is_empty() && report.cliques.is_empty());
        assert!(out.labels.unwrap().iter().flatten().all(|l| !l.is_anomaly));
    }

    #[test]
    fn pool_overflow_is_rejected() {
        let g = news_source(6, 2);
        assert!(inject_attribute_anomalies(&g, &attr_cfg(3, 4, 0)).is_err());
        let bad = InjectionConfig {
            attr_n: [("S".to_string(), 1)].into_iter().collect(),
            attr_k: 0,
            ..Default::default()
        };
        assert!(inject_attribute_anomalies(&g, &bad).is_err());
    }

    fn struct_cfg(m: usize, c: usize, seed: u64) -> InjectionConfig {
        InjectionConfig {
            struct_m: m,
            struct_c: c,
            struct_relation: Some("publishes".into()),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn bipartite_clique_of_four() {
        let mut g = news_source(10, 4);
        g.set_edges(0, vec![]).unwrap();
        let (out, report) = inject_structural_anomalies(&g, &struct_cfg(4, 1, 3)).unwrap();
        let c = &report.cliques[0];
        assert_eq!((c.src_nodes.len(), c.dst_nodes.len()), (2, 2));
        // K_{2,2} has 2 * 2 edges.
        assert_eq!(c.edges_added, 4);
        assert_eq!(out.num_edges(0), 4);
        let labels = out.labels.as_ref().unwrap();
        let n_struct = labels.iter().flatten().filter(|l| l.kind == AnomalyKind::Structural).count();
        assert_eq!(n_struct, 4);
        assert!(validate_graph(&out).is_empty());
    }

    #[test]
    fn existing_edges_are_skipped() {
        let g = news_source(10, 4);
        let (out, report) = inject_structural_anomalies(&g, &struct_cfg(4, 1, 5)).unwrap();
        let c = &report.cliques[0];
        let pre = c
            .src_nodes
            .iter()
            .flat_map(|&i| c.dst_nodes.iter().map(move |&j| (i, j)))
            .filter(|p| g.edges[0].contains(p))
            .count();
        assert_eq!(c.edges_added, 4 - pre);
        assert_eq!(out.num_edges(0), g.num_edges(0) + c.edges_added);
    }

    #[test]
    fn zero_clusters_is_identity() {
        let g = news_source(10, 4);
        let (out, report) = inject_structural_anomalies(&g, &struct_cfg(4, 0, 0)).unwrap();
        assert_eq!(out.edges, g.edges);
        assert!(report.cliques.is_empty());
    }

    #[test]
    fn clusters_are_disjoint_and_counts_add_up() {
        let g = news_source(30, 12);
        let mut cfg = struct_cfg(5, 3, 9);
        cfg.attr_n.insert("N".into(), 4);
        cfg.attr_k = 5;
        let (out, report) = inject(&g, &cfg).unwrap();
        let labels = out.labels.unwrap();
        let count = |k| labels.iter().flatten().filter(|l| l.kind == k).count();
        assert_eq!(count(AnomalyKind::Attribute), 4);
        assert_eq!(count(AnomalyKind::Structural), 15);
        assert_eq!(report.num_structural(), 15);
        let mut seen = std::collections::HashSet::new();
        for c in &report.cliques {
            for &i in &c.src_nodes {
                assert!(seen.insert(("S", i)));
            }
            for &j in &c.dst_nodes {
                assert!(seen.insert(("N", j)));
            }
        }
        for rec in &report.attribute {
            assert!(!seen.contains(&("N", rec.node)));
        }
    }

    #[test]
    fn insufficient_nodes_and_unknown_relation() {
        let g = news_source(4, 2);
        assert!(inject_structural_anomalies(&g, &struct_cfg(6, 1, 0)).is_err());
        let mut cfg = struct_cfg(2, 1, 0);
        cfg.struct_relation = Some("publishes_rev".into());
        assert!(inject_structural_anomalies(&g, &cfg).is_err());
        cfg.struct_relation = None;
        assert!(inject_structural_anomalies(&g, &cfg).is_err());
    }

    #[test]
    fn injection_is_deterministic_per_seed() {
        let g = news_source(40, 12);
        let mut cfg = struct_cfg(4, 2, 17);
        cfg.attr_n.insert("N".into(), 5);
        cfg.attr_k = 10;
        let a = inject(&g, &cfg).unwrap();
        let b = inject(&g, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_attribute_type_is_rejected() {
        let (g, _) = crate::train::tiny_fixture(0);
        let cfg = InjectionConfig {
            attr_n: [("venue".to_string(), 1)].into_iter().collect(),
            attr_k: 2,
            ..InjectionConfig::default()
        };
        let err = inject_attribute_anomalies(&g, &cfg).unwrap_err();
        assert!(err.to_string().contains("venue"), "{err}");
    }
}
