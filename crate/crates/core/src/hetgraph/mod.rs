//! Heterogeneous graph data model.
//!
//! A [`HetGraph`] holds typed node sets, each with its own attribute matrix,
//! and typed edge sets. Every declared relation gets an automatically
//! maintained reverse relation so that messages can flow into every node type;
//! only declared relations are reconstructed by the structure decoder.

pub(crate) mod bundle;

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{AheadError, Result};

pub use bundle::{load_bundle, load_labels, read_label_rows, save_bundle, schema_hash, write_labels, LabelRow};

pub type Matrix = Array2<f64>;

const REVERSE_SUFFIX: &str = "_rev";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTypeSpec {
    pub name: String,
    pub num_nodes: usize,
    pub attr_dim: usize,
    pub view_dims: Vec<usize>,
    /// Attribute column indices making up each view, in view order.
    pub view_columns: Vec<Vec<usize>>,
}

impl NodeTypeSpec {
    /// Node type whose views are contiguous column blocks of the given sizes.
    pub fn new(name: impl Into<String>, num_nodes: usize, view_dims: Vec<usize>) -> Self {
        let mut view_columns = Vec::with_capacity(view_dims.len());
        let mut start = 0;
        for &d in &view_dims {
            view_columns.push((start..start + d).collect());
            start += d;
        }
        NodeTypeSpec {
            name: name.into(),
            num_nodes,
            attr_dim: start,
            view_dims,
            view_columns,
        }
    }

    pub fn num_views(&self) -> usize {
        self.view_dims.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub src_type: String,
    pub dst_type: String,
    /// Name of the declared relation this one mirrors, for generated reverses.
    pub reversed_of: Option<String>,
}

impl RelationSpec {
    pub fn is_reverse(&self) -> bool {
        self.reversed_of.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    None,
    Attribute,
    Structural,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::None => "none",
            AnomalyKind::Attribute => "attr",
            AnomalyKind::Structural => "struct",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(AnomalyKind::None),
            "attr" => Some(AnomalyKind::Attribute),
            "struct" => Some(AnomalyKind::Structural),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLabel {
    pub is_anomaly: bool,
    pub kind: AnomalyKind,
}

impl NodeLabel {
    pub const NORMAL: NodeLabel = NodeLabel {
        is_anomaly: false,
        kind: AnomalyKind::None,
    };

    pub fn anomaly(kind: AnomalyKind) -> Self {
        NodeLabel {
            is_anomaly: true,
            kind,
        }
    }
}

/// Per node type, per local node index.
pub type Labels = Vec<Vec<NodeLabel>>;

#[derive(Debug, Clone, PartialEq)]
pub struct HetGraph {
    pub node_types: Vec<NodeTypeSpec>,
    /// Declared relations and their generated reverses.
    pub relations: Vec<RelationSpec>,
    /// One `num_nodes × attr_dim` matrix per node type.
    pub attrs: Vec<Matrix>,
    /// `(src local index, dst local index)` pairs, parallel to `relations`.
    pub edges: Vec<Vec<(usize, usize)>>,
    pub labels: Option<Labels>,
}

impl HetGraph {
    /// Builds an edgeless graph, generating one reverse relation per declared
    /// `(name, src_type, dst_type)` triple.
    pub fn new(
        node_types: Vec<NodeTypeSpec>,
        declared: &[(&str, &str, &str)],
        attrs: Vec<Matrix>,
    ) -> Result<Self> {
        let mut relations = Vec::with_capacity(declared.len() * 2);
        for &(name, src, dst) in declared {
            relations.push(RelationSpec {
                name: name.to_string(),
                src_type: src.to_string(),
                dst_type: dst.to_string(),
                reversed_of: None,
            });
        }
        for &(name, src, dst) in declared {
            relations.push(RelationSpec {
                name: format!("{name}{REVERSE_SUFFIX}"),
                src_type: dst.to_string(),
                dst_type: src.to_string(),
                reversed_of: Some(name.to_string()),
            });
        }
        let edges = vec![Vec::new(); relations.len()];
        let g = HetGraph {
            node_types,
            relations,
            attrs,
            edges,
            labels: None,
        };
        let violations = validate_graph(&g);
        if !violations.is_empty() {
            return Err(AheadError::InvalidGraph(violations));
        }
        Ok(g)
    }

    pub fn num_types(&self) -> usize {
        self.node_types.len()
    }

    pub fn total_nodes(&self) -> usize {
        self.node_types.iter().map(|t| t.num_nodes).sum()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    /// `(src type index, dst type index)` of a relation. Panics on a graph
    /// that failed validation.
    pub fn endpoints(&self, rel: usize) -> (usize, usize) {
        let r = &self.relations[rel];
        (
            self.type_index(&r.src_type).expect("validated src type"),
            self.type_index(&r.dst_type).expect("validated dst type"),
        )
    }

    /// Indices of declared (non-reverse) relations.
    pub fn declared_relations(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.relations.len()).filter(|&r| !self.relations[r].is_reverse())
    }

    pub fn reverse_of(&self, rel: usize) -> Option<usize> {
        let name = &self.relations[rel].name;
        self.relations
            .iter()
            .position(|r| r.reversed_of.as_deref() == Some(name.as_str()))
    }

    pub fn num_edges(&self, rel: usize) -> usize {
        self.edges[rel].len()
    }

    /// Replaces the edge set of a declared relation and mirrors it into the
    /// reverse relation.
    pub fn set_edges(&mut self, rel: usize, edges: Vec<(usize, usize)>) -> Result<()> {
        let rev = self.declared_reverse(rel)?;
        self.edges[rev] = edges.iter().map(|&(s, d)| (d, s)).collect();
        self.edges[rel] = edges;
        Ok(())
    }

    /// Adds edges to a declared relation (and its reverse), skipping pairs
    /// already present. Returns the number of edges added.
    pub fn add_edges(
        &mut self,
        rel: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<usize> {
        let rev = self.declared_reverse(rel)?;
        let mut present: HashSet<(usize, usize)> = self.edges[rel].iter().copied().collect();
        let mut added = 0;
        for (s, d) in pairs {
            if present.insert((s, d)) {
                self.edges[rel].push((s, d));
                self.edges[rev].push((d, s));
                added += 1;
            }
        }
        Ok(added)
    }

    fn declared_reverse(&self, rel: usize) -> Result<usize> {
        if rel >= self.relations.len() || self.relations[rel].is_reverse() {
            return Err(AheadError::Config(format!(
                "relation index {rel} is not a declared relation"
            )));
        }
        self.reverse_of(rel).ok_or_else(|| {
            AheadError::Schema(format!(
                "relation '{}' has no reverse",
                self.relations[rel].name
            ))
        })
    }

    /// Dense binary adjacency of a relation, `n_src × n_dst`.
    pub fn dense_adjacency(&self, rel: usize) -> Matrix {
        let (s, d) = self.endpoints(rel);
        let mut a = Matrix::zeros((self.node_types[s].num_nodes, self.node_types[d].num_nodes));
        for &(i, j) in &self.edges[rel] {
            a[[i, j]] = 1.0;
        }
        a
    }

    /// Labels, or all-normal labels if the graph carries none.
    pub fn labels_or_normal(&self) -> Labels {
        self.labels.clone().unwrap_or_else(|| {
            self.node_types
                .iter()
                .map(|t| vec![NodeLabel::NORMAL; t.num_nodes])
                .collect()
        })
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Checks every structural invariant of the graph. An empty result means the
/// graph is well-formed.
pub fn validate_graph(g: &HetGraph) -> Vec<String> {
    let mut out = Vec::new();

    let mut seen = HashSet::new();
    for t in &g.node_types {
        if !is_identifier(&t.name) {
            out.push(format!("node type name '{}' is not an identifier", t.name));
        }
        if !seen.insert(t.name.as_str()) {
            out.push(format!("duplicate node type '{}'", t.name));
        }
        if t.num_nodes == 0 {
            out.push(format!("node type '{}': num_nodes must be at least 1", t.name));
        }
        if t.view_dims.is_empty() {
            out.push(format!("node type '{}': at least one view required", t.name));
        }
        if t.view_dims.contains(&0) {
            out.push(format!("node type '{}': every view dim must be at least 1", t.name));
        }
        if t.view_dims.iter().sum::<usize>() != t.attr_dim {
            out.push(format!(
                "node type '{}': view dims sum to {} but attr_dim is {}",
                t.name,
                t.view_dims.iter().sum::<usize>(),
                t.attr_dim
            ));
        }
        check_view_columns(t, &mut out);
    }

    if g.attrs.len() != g.node_types.len() {
        out.push(format!(
            "expected {} attribute matrices, found {}",
            g.node_types.len(),
            g.attrs.len()
        ));
    } else {
        for (t, x) in g.node_types.iter().zip(&g.attrs) {
            if x.dim() != (t.num_nodes, t.attr_dim) {
                out.push(format!(
                    "node type '{}': attribute shape {:?}, expected ({}, {})",
                    t.name,
                    x.dim(),
                    t.num_nodes,
                    t.attr_dim
                ));
            }
            if x.iter().any(|v| !v.is_finite()) {
                out.push(format!("node type '{}': non-finite attribute value", t.name));
            }
        }
    }

    let before_relations = out.len();
    let mut rel_names = HashSet::new();
    for r in &g.relations {
        if !is_identifier(&r.name) {
            out.push(format!("relation name '{}' is not an identifier", r.name));
        }
        if !rel_names.insert(r.name.as_str()) {
            out.push(format!("duplicate relation '{}'", r.name));
        }
        for end in [&r.src_type, &r.dst_type] {
            if g.type_index(end).is_none() {
                out.push(format!("relation '{}': unknown node type '{}'", r.name, end));
            }
        }
    }
    for r in &g.relations {
        match &r.reversed_of {
            None => {
                let revs: Vec<_> = g
                    .relations
                    .iter()
                    .filter(|q| q.reversed_of.as_deref() == Some(r.name.as_str()))
                    .collect();
                if revs.len() != 1 {
                    out.push(format!(
                        "relation '{}': expected exactly one reverse relation, found {}",
                        r.name,
                        revs.len()
                    ));
                } else if revs[0].src_type != r.dst_type || revs[0].dst_type != r.src_type {
                    out.push(format!(
                        "reverse relation mismatch: '{}' does not swap the endpoints of '{}'",
                        revs[0].name, r.name
                    ));
                }
            }
            Some(base) => {
                if !g.relations.iter().any(|q| &q.name == base && !q.is_reverse()) {
                    out.push(format!(
                        "relation '{}': reverse of unknown declared relation '{}'",
                        r.name, base
                    ));
                }
            }
        }
    }

    if g.edges.len() != g.relations.len() {
        out.push(format!(
            "expected {} edge lists, found {}",
            g.relations.len(),
            g.edges.len()
        ));
        return out;
    }
    if out.len() > before_relations {
        // Edge checks need resolvable endpoint types.
        return out;
    }

    for (ri, r) in g.relations.iter().enumerate() {
        let (s, d) = g.endpoints(ri);
        let (ns, nd) = (g.node_types[s].num_nodes, g.node_types[d].num_nodes);
        let mut pairs = HashSet::with_capacity(g.edges[ri].len());
        for &(i, j) in &g.edges[ri] {
            if i >= ns || j >= nd {
                out.push(format!(
                    "edge index out of range: relation '{}' edge ({i}, {j}) with {ns} '{}' and {nd} '{}' nodes",
                    r.name, r.src_type, r.dst_type
                ));
            }
            if !pairs.insert((i, j)) {
                out.push(format!("relation '{}': duplicate edge ({i}, {j})", r.name));
            }
        }
    }
    for ri in g.declared_relations() {
        if let Some(rev) = g.reverse_of(ri) {
            let fwd: HashSet<(usize, usize)> = g.edges[ri].iter().copied().collect();
            let bwd: HashSet<(usize, usize)> = g.edges[rev].iter().map(|&(a, b)| (b, a)).collect();
            if fwd != bwd {
                out.push(format!(
                    "reverse relation mismatch: '{}' is not the transpose of '{}'",
                    g.relations[rev].name, g.relations[ri].name
                ));
            }
        }
    }

    if let Some(labels) = &g.labels {
        if labels.len() != g.node_types.len() {
            out.push(format!(
                "labels cover {} node types, expected {}",
                labels.len(),
                g.node_types.len()
            ));
        } else {
            for (t, l) in g.node_types.iter().zip(labels) {
                if l.len() != t.num_nodes {
                    out.push(format!(
                        "node type '{}': {} labels for {} nodes",
                        t.name,
                        l.len(),
                        t.num_nodes
                    ));
                }
            }
        }
    }
    out
}

fn check_view_columns(t: &NodeTypeSpec, out: &mut Vec<String>) {
    if t.view_columns.len() != t.view_dims.len() {
        out.push(format!(
            "node type '{}': {} view column sets for {} views",
            t.name,
            t.view_columns.len(),
            t.view_dims.len()
        ));
        return;
    }
    let mut hit = vec![false; t.attr_dim];
    for (v, (cols, &dim)) in t.view_columns.iter().zip(&t.view_dims).enumerate() {
        if cols.len() != dim {
            out.push(format!(
                "node type '{}': view {v} has {} columns, declared {dim}",
                t.name,
                cols.len()
            ));
        }
        for &c in cols {
            if c >= t.attr_dim {
                out.push(format!("node type '{}': view column {c} out of range", t.name));
            } else if std::mem::replace(&mut hit[c], true) {
                out.push(format!("node type '{}': column {c} in more than one view", t.name));
            }
        }
    }
    if hit.iter().any(|h| !h) && t.view_dims.iter().sum::<usize>() == t.attr_dim {
        out.push(format!("node type '{}': views do not cover every column", t.name));
    }
}

/// Bijection between `(type, local index)` and a global node index, with
/// node types laid out as consecutive blocks in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalNodeIndex {
    offsets: Vec<usize>,
    total: usize,
}

impl GlobalNodeIndex {
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn offset(&self, ty: usize) -> usize {
        self.offsets[ty]
    }

    pub fn to_global(&self, ty: usize, local: usize) -> usize {
        self.offsets[ty] + local
    }

    pub fn to_local(&self, global: usize) -> Option<(usize, usize)> {
        if global >= self.total {
            return None;
        }
        let ty = self.offsets.partition_point(|&o| o <= global) - 1;
        Some((ty, global - self.offsets[ty]))
    }
}

pub fn global_index(g: &HetGraph) -> Result<GlobalNodeIndex> {
    let violations = validate_graph(g);
    if !violations.is_empty() {
        return Err(AheadError::InvalidGraph(violations));
    }
    let mut offsets = Vec::with_capacity(g.node_types.len());
    let mut total = 0;
    for t in &g.node_types {
        offsets.push(total);
        total += t.num_nodes;
    }
    Ok(GlobalNodeIndex { offsets, total })
}
