//! Synthetic block-structured heterogeneous graphs.
//!
//! Every node belongs to one of `blocks` communities (balanced, random per
//! type). Edges of a relation are drawn independently with a higher
//! probability inside a community than across, tuned so the expected density
//! matches the configured value. Attributes are a per-(type, block) mean
//! vector plus unit Gaussian noise.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{AheadError, Result};
use crate::hetgraph::{validate_graph, HetGraph, Matrix, NodeTypeSpec};
use crate::inject::InjectionConfig;
use crate::rng::seeded;

const BLOCK_STREAM: u64 = 20;
const ATTR_STREAM: u64 = 21;
const EDGE_STREAM: u64 = 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthNodeType {
    pub name: String,
    pub num_nodes: usize,
    pub attr_dim: usize,
    /// Number of contiguous, near-equal views.
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRelation {
    pub name: String,
    pub src: String,
    pub dst: String,
    /// Expected fraction of `(src, dst)` pairs that are edges.
    pub density: f64,
    /// Ratio of within-block to across-block edge probability.
    #[serde(default = "default_contrast")]
    pub contrast: f64,
}

fn default_contrast() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub node_types: Vec<SynthNodeType>,
    pub relations: Vec<SynthRelation>,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    /// Common positive level added to every attribute.
    #[serde(default = "default_base")]
    pub attr_base: f64,
    /// Standard deviation of the per-block mean offsets.
    #[serde(default = "default_offset_std")]
    pub block_offset_std: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    /// Fraction of nodes to mark anomalous when no explicit injection sizes
    /// are given.
    #[serde(default)]
    pub anomaly_ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_blocks() -> usize {
    5
}
fn default_base() -> f64 {
    1.0
}
fn default_offset_std() -> f64 {
    1.0
}
fn default_noise_std() -> f64 {
    1.0
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(AheadError::Config(m));
        if self.node_types.is_empty() {
            return err("at least one node type required".into());
        }
        if self.blocks == 0 {
            return err("blocks must be at least 1".into());
        }
        for t in &self.node_types {
            if t.num_nodes == 0 || t.attr_dim == 0 || t.views == 0 {
                return err(format!("node type '{}': counts must be at least 1", t.name));
            }
            if t.views > t.attr_dim {
                return err(format!(
                    "node type '{}': {} views but only {} attribute columns",
                    t.name, t.views, t.attr_dim
                ));
            }
        }
        for r in &self.relations {
            if !(0.0..=1.0).contains(&r.density) {
                return err(format!("relation '{}': density {} outside [0, 1]", r.name, r.density));
            }
            if !(r.contrast >= 1.0 && r.contrast.is_finite()) {
                return err(format!("relation '{}': contrast must be at least 1", r.name));
            }
            for end in [&r.src, &r.dst] {
                if !self.node_types.iter().any(|t| &t.name == end) {
                    return err(format!("relation '{}': unknown node type '{end}'", r.name));
                }
            }
        }
        let ok_std = |x: f64| x >= 0.0 && x.is_finite();
        if !(ok_std(self.block_offset_std) && ok_std(self.noise_std) && self.attr_base.is_finite()) {
            return err("attribute model parameters must be finite, standard deviations non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.anomaly_ratio) {
            return err(format!("anomaly ratio {} outside [0, 1]", self.anomaly_ratio));
        }
        Ok(())
    }

    pub fn total_nodes(&self) -> usize {
        self.node_types.iter().map(|t| t.num_nodes).sum()
    }
}

fn even_views(dim: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| dim / k + usize::from(i < dim % k)).collect()
}

fn balanced_blocks(n: usize, blocks: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut b: Vec<usize> = (0..n).map(|i| i % blocks).collect();
    b.shuffle(rng);
    b
}

/// `(p_in, p_out)` giving expected density `d` when a fraction `f` of pairs is
/// within-block. `p_in` is capped at 1 with `p_out` raised to compensate.
pub fn block_probabilities(d: f64, f: f64, contrast: f64) -> (f64, f64) {
    if f >= 1.0 || f <= 0.0 {
        return (d, d);
    }
    let p_out = d / (f * contrast + 1.0 - f);
    let p_in = contrast * p_out;
    if p_in <= 1.0 {
        (p_in, p_out)
    } else {
        (1.0, ((d - f) / (1.0 - f)).clamp(0.0, 1.0))
    }
}

/// Block id of every node, per type.
pub type BlockAssignment = Vec<Vec<usize>>;

pub fn generate(cfg: &SynthConfig) -> Result<HetGraph> {
    generate_with_blocks(cfg).map(|(g, _)| g)
}

pub fn generate_with_blocks(cfg: &SynthConfig) -> Result<(HetGraph, BlockAssignment)> {
    cfg.validate()?;
    let mut block_rng = seeded(cfg.seed, BLOCK_STREAM);
    let blocks: BlockAssignment = cfg
        .node_types
        .iter()
        .map(|t| balanced_blocks(t.num_nodes, cfg.blocks, &mut block_rng))
        .collect();

    let mut attr_rng = seeded(cfg.seed, ATTR_STREAM);
    let offset = Normal::new(0.0, cfg.block_offset_std).map_err(|e| AheadError::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| AheadError::Config(e.to_string()))?;
    let mut attrs = Vec::with_capacity(cfg.node_types.len());
    for (t, bl) in cfg.node_types.iter().zip(&blocks) {
        let means = Matrix::from_shape_fn((cfg.blocks, t.attr_dim), |_| cfg.attr_base + offset.sample(&mut attr_rng));
        let x = Matrix::from_shape_fn((t.num_nodes, t.attr_dim), |(i, j)| {
            means[[bl[i], j]] + noise.sample(&mut attr_rng)
        });
        attrs.push(x);
    }

    let specs: Vec<NodeTypeSpec> = cfg
        .node_types
        .iter()
        .map(|t| NodeTypeSpec::new(t.name.clone(), t.num_nodes, even_views(t.attr_dim, t.views)))
        .collect();
    let rels: Vec<(&str, &str, &str)> = cfg
        .relations
        .iter()
        .map(|r| (r.name.as_str(), r.src.as_str(), r.dst.as_str()))
        .collect();
    let mut g = HetGraph::new(specs, &rels, attrs)?;

    let mut edge_rng = seeded(cfg.seed, EDGE_STREAM);
    for r in &cfg.relations {
        let ri = g.relation_index(&r.name).expect("declared");
        let (s, d) = g.endpoints(ri);
        let (bs, bd) = (&blocks[s], &blocks[d]);
        let mut count_s = vec![0usize; cfg.blocks];
        let mut count_d = vec![0usize; cfg.blocks];
        bs.iter().for_each(|&b| count_s[b] += 1);
        bd.iter().for_each(|&b| count_d[b] += 1);
        let within: usize = count_s.iter().zip(&count_d).map(|(a, b)| a * b).sum();
        let f = within as f64 / (bs.len() * bd.len()) as f64;
        let (p_in, p_out) = block_probabilities(r.density, f, r.contrast);
        let mut edges = Vec::new();
        for (i, &bi) in bs.iter().enumerate() {
            for (j, &bj) in bd.iter().enumerate() {
                let p = if bi == bj { p_in } else { p_out };
                if p > 0.0 && (p >= 1.0 || edge_rng.random_bool(p)) {
                    edges.push((i, j));
                }
            }
        }
        g.set_edges(ri, edges)?;
    }

    let problems = validate_graph(&g);
    if !problems.is_empty() {
        return Err(AheadError::InvalidGraph(problems));
    }
    Ok((g, blocks))
}

fn two_type(
    a: (&str, usize, usize, usize),
    b: (&str, usize, usize, usize),
    rel: (&str, &str, &str, f64),
    ratio: f64,
) -> SynthConfig {
    let nt = |(name, n, d, v): (&str, usize, usize, usize)| SynthNodeType {
        name: name.into(),
        num_nodes: n,
        attr_dim: d,
        views: v,
    };
    SynthConfig {
        node_types: vec![nt(a), nt(b)],
        relations: vec![SynthRelation {
            name: rel.0.into(),
            src: rel.1.into(),
            dst: rel.2.into(),
            density: rel.3,
            contrast: default_contrast(),
        }],
        blocks: default_blocks(),
        attr_base: default_base(),
        block_offset_std: default_offset_std(),
        noise_std: default_noise_std(),
        anomaly_ratio: ratio,
        seed: 0,
    }
}

pub const PRESETS: [&str; 8] = [
    "imdb",
    "coaid",
    "politifact",
    "gossipcop",
    "imdb-mini",
    "coaid-mini",
    "politifact-mini",
    "gossipcop-mini",
];

/// Presets with the node counts, attribute dimensions, view counts and
/// anomaly ratios of the four benchmark datasets. The `-mini` variants
/// divide every node count above 1,000 by ten.
pub fn preset(name: &str) -> Result<SynthConfig> {
    let (base, mini) = match name.strip_suffix("-mini") {
        Some(b) => (b, true),
        None => (name, false),
    };
    let n = |full: usize| if mini && full > 1000 { (full as f64 / 10.0).round() as usize } else { full };
    let news = |nn: usize, ns: usize, density: f64, ratio: f64| {
        two_type(
            ("news", n(nn), 1536, 3),
            ("source", n(ns), 768, 2),
            ("publishes", "source", "news", density),
            ratio,
        )
    };
    let cfg = match base {
        "imdb" => two_type(
            ("movie", n(4278), 3066, 2),
            ("actor", n(5257), 3066, 3),
            ("acts_in", "actor", "movie", if mini { 0.01 } else { 0.001 }),
            0.0250,
        ),
        "coaid" => news(5457, 199, 0.02, 0.1701),
        "politifact" => news(1054, 285, 0.03, 0.3458),
        "gossipcop" => news(22140, 2027, if mini { 0.02 } else { 0.002 }, 0.2217),
        _ => {
            return Err(AheadError::Config(format!(
                "unknown preset '{name}' (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

/// Injection sizes reaching the configured anomaly ratio: half the budget as
/// attribute anomalies spread over types by size, half as cliques of `m`.
pub fn suggested_injection(cfg: &SynthConfig, struct_m: usize, seed: u64) -> InjectionConfig {
    let total = (cfg.anomaly_ratio * cfg.total_nodes() as f64).round() as usize;
    let n_attr = total / 2;
    let all = cfg.total_nodes() as f64;
    let mut attr_n = BTreeMap::new();
    let mut assigned = 0;
    for (i, t) in cfg.node_types.iter().enumerate() {
        let share = if i + 1 == cfg.node_types.len() {
            n_attr - assigned
        } else {
            (n_attr as f64 * t.num_nodes as f64 / all).round() as usize
        };
        assigned += share;
        attr_n.insert(t.name.clone(), share);
    }
    let struct_c = (total - n_attr).checked_div(struct_m).unwrap_or(0);
    InjectionConfig {
        attr_n,
        struct_m,
        struct_c,
        struct_relation: cfg.relations.first().map(|r| r.name.clone()),
        seed,
        ..Default::default()
    }
}
