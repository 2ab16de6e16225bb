//! Multi-view heterogeneous graph transformer encoder.
//!
//! Each view combination (one attribute view per node type) is encoded by
//! the same stack of layers. A layer computes, per head and per incoming edge
//! `(s, e, t)`, the score `K(s) · W_att[φ(e)] · Q(t)ᵀ · μ[τ(s), φ(e), τ(t)] / √d`,
//! softmax-normalizes the scores over all incoming edges of `t`, aggregates
//! the messages `M(s) · W_mes[φ(e)]`, and updates
//! `H[t] ← relu(Linear_τ(t)(H̃[t])) + H[t]`.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AheadError, Result};
use crate::hetgraph::{HetGraph, Matrix};
use crate::params::{Bound, ModelParams};
use crate::preprocess::{view_slice, ViewPartition};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnScale {
    /// Divide by `√h1`, the overall hidden dimension.
    Overall,
    /// Divide by `√(h1 / heads)`.
    PerHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub attn_scale: AttnScale,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_dim: 64,
            out_dim: 16,
            heads: 2,
            depth: 2,
            attn_scale: AttnScale::Overall,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(AheadError::Config(format!(
                "heads ({}) must divide hidden_dim ({})",
                self.heads, self.hidden_dim
            )));
        }
        if self.depth == 0 {
            return Err(AheadError::Config("depth must be at least 1".into()));
        }
        if self.out_dim == 0 {
            return Err(AheadError::Config("out_dim must be at least 1".into()));
        }
        Ok(())
    }

    pub fn score_divisor(&self) -> f64 {
        match self.attn_scale {
            AttnScale::Overall => (self.hidden_dim as f64).sqrt(),
            AttnScale::PerHead => (self.head_dim() as f64).sqrt(),
        }
    }
}

/// One view per node type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewCombination {
    /// View index per node type, in declaration order.
    pub assignment: Vec<usize>,
    /// 1-based position in the enumeration.
    pub ordinal: usize,
}

/// All `Π_a k_a` view combinations, lexicographic with the first node type
/// most significant.
pub fn enumerate_view_combinations(g: &HetGraph) -> Vec<ViewCombination> {
    let counts: Vec<usize> = g.node_types.iter().map(|t| t.num_views()).collect();
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut current = vec![0; counts.len()];
    for ordinal in 1..=total {
        out.push(ViewCombination {
            assignment: current.clone(),
            ordinal,
        });
        for pos in (0..counts.len()).rev() {
            current[pos] += 1;
            if current[pos] < counts[pos] {
                break;
            }
            current[pos] = 0;
        }
    }
    out
}

pub mod paths {
    pub fn input_weight(ty: &str, view: usize) -> String {
        format!("encoder.input.type:{ty}.view{view}.weight")
    }
    pub fn input_bias(ty: &str, view: usize) -> String {
        format!("encoder.input.type:{ty}.view{view}.bias")
    }
    /// `which` is one of `K`, `Q`, `M`.
    pub fn proj_weight(layer: usize, ty: &str, which: char, head: usize) -> String {
        format!("encoder.layer{layer}.type:{ty}.{which}.head{head}.weight")
    }
    pub fn proj_bias(layer: usize, ty: &str, which: char, head: usize) -> String {
        format!("encoder.layer{layer}.type:{ty}.{which}.head{head}.bias")
    }
    pub fn w_att(layer: usize, rel: &str, head: usize) -> String {
        format!("encoder.layer{layer}.rel:{rel}.W_att.head{head}")
    }
    pub fn w_mes(layer: usize, rel: &str, head: usize) -> String {
        format!("encoder.layer{layer}.rel:{rel}.W_mes.head{head}")
    }
    pub fn out_weight(layer: usize, ty: &str) -> String {
        format!("encoder.layer{layer}.type:{ty}.out.weight")
    }
    pub fn out_bias(layer: usize, ty: &str) -> String {
        format!("encoder.layer{layer}.type:{ty}.out.bias")
    }
    pub const MU: &str = "encoder.mu";
}

/// Uniform Glorot initialization for an `fan_in × fan_out` matrix.
pub(crate) fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit))
}

/// Adds every encoder tensor to `params`. `μ` starts at one.
pub fn init_encoder(g: &HetGraph, cfg: &EncoderConfig, rng: &mut impl Rng, params: &mut ModelParams) {
    let (h1, dh) = (cfg.hidden_dim, cfg.head_dim());
    for t in &g.node_types {
        for (v, &d) in t.view_dims.iter().enumerate() {
            params.insert(paths::input_weight(&t.name, v), glorot(rng, d, h1));
            params.insert(paths::input_bias(&t.name, v), Matrix::zeros((1, h1)));
        }
    }
    for l in 0..cfg.depth {
        for t in &g.node_types {
            for which in ['K', 'Q', 'M'] {
                for i in 0..cfg.heads {
                    params.insert(paths::proj_weight(l, &t.name, which, i), glorot(rng, h1, dh));
                    params.insert(paths::proj_bias(l, &t.name, which, i), Matrix::zeros((1, dh)));
                }
            }
        }
        for r in &g.relations {
            for i in 0..cfg.heads {
                params.insert(paths::w_att(l, &r.name, i), glorot(rng, dh, dh));
                params.insert(paths::w_mes(l, &r.name, i), glorot(rng, dh, dh));
            }
        }
        for t in &g.node_types {
            params.insert(paths::out_weight(l, &t.name), glorot(rng, h1, h1));
            params.insert(paths::out_bias(l, &t.name), Matrix::zeros((1, h1)));
        }
    }
    let (na, nr) = (g.num_types(), g.relations.len());
    params.insert(paths::MU, Matrix::ones((na, nr * na)));
}

/// Column of `encoder.mu` (stored as `|A| × (|R|·|A|)`) for a meta relation;
/// the row is the source type.
pub fn mu_index(num_types: usize, src: usize, rel: usize, dst: usize) -> (usize, usize) {
    (src, rel * num_types + dst)
}

/// Index structures derived once per graph.
pub struct GraphPlan {
    pub num_nodes: Vec<usize>,
    pub type_names: Vec<String>,
    pub rel_names: Vec<String>,
    pub rel_ends: Vec<(usize, usize)>,
    pub src_idx: Vec<Rc<[usize]>>,
    pub dst_idx: Vec<Rc<[usize]>>,
    /// Per target type, relations (including reverses) that end in it.
    pub incoming: Vec<Vec<usize>>,
    /// Per target type, the target index of every incoming edge, in the
    /// concatenation order of `incoming`.
    pub groups: Vec<Rc<[usize]>>,
}

impl GraphPlan {
    pub fn new(g: &HetGraph) -> Self {
        let nr = g.relations.len();
        let rel_ends: Vec<_> = (0..nr).map(|r| g.endpoints(r)).collect();
        let src_idx: Vec<Rc<[usize]>> = g
            .edges
            .iter()
            .map(|es| es.iter().map(|&(s, _)| s).collect())
            .collect();
        let dst_idx: Vec<Rc<[usize]>> = g
            .edges
            .iter()
            .map(|es| es.iter().map(|&(_, d)| d).collect())
            .collect();
        let mut incoming = vec![Vec::new(); g.num_types()];
        for (r, &(_, d)) in rel_ends.iter().enumerate() {
            incoming[d].push(r);
        }
        let groups = incoming
            .iter()
            .map(|rels| {
                rels.iter()
                    .flat_map(|&r| dst_idx[r].iter().copied())
                    .collect::<Vec<_>>()
                    .into()
            })
            .collect();
        GraphPlan {
            num_nodes: g.node_types.iter().map(|t| t.num_nodes).collect(),
            type_names: g.node_types.iter().map(|t| t.name.clone()).collect(),
            rel_names: g.relations.iter().map(|r| r.name.clone()).collect(),
            rel_ends,
            src_idx,
            dst_idx,
            incoming,
            groups,
        }
    }

    pub fn num_types(&self) -> usize {
        self.num_nodes.len()
    }
}

/// Per-forward cache of view projections, shared by all combinations that
/// use the same view of a node type.
#[derive(Default)]
pub struct InputCache {
    projected: HashMap<(usize, usize), Var>,
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

fn ensure_finite(tape: &Tape, v: Var, what: impl FnOnce() -> String) -> Result<()> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AheadError::Numerical(format!("non-finite values in {}", what())))
    }
}

/// `H⁽⁰⁾[type] = X[type, view] · W + b` for the view chosen by `combo`.
pub(crate) fn project_inputs_on(
    tape: &mut Tape,
    g: &HetGraph,
    partition: &ViewPartition,
    combo: &ViewCombination,
    bound: &Bound,
    cache: &mut InputCache,
) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(g.num_types());
    for (ty, &view) in combo.assignment.iter().enumerate() {
        if let Some(&v) = cache.projected.get(&(ty, view)) {
            out.push(v);
            continue;
        }
        let name = &g.node_types[ty].name;
        let x = view_slice(g, partition, ty, view)?;
        let w = bound.var(&paths::input_weight(name, view))?;
        if tape.value(w).nrows() != x.ncols() {
            return Err(AheadError::Model(format!(
                "input projection for '{name}' view {view} expects {} columns, view has {}",
                tape.value(w).nrows(),
                x.ncols()
            )));
        }
        let b = bound.var(&paths::input_bias(name, view))?;
        let xv = tape.constant(x);
        let h = linear(tape, xv, w, b);
        cache.projected.insert((ty, view), h);
        out.push(h);
    }
    Ok(out)
}

/// Attention weights of one layer: per target type, an `E × heads` matrix over
/// the concatenated incoming edges (see [`GraphPlan::incoming`]).
pub(crate) struct LayerOutput {
    pub hidden: Vec<Var>,
    pub attention: Vec<Vec<Var>>,
}

pub(crate) fn layer_forward_on(
    tape: &mut Tape,
    plan: &GraphPlan,
    cfg: &EncoderConfig,
    h: &[Var],
    bound: &Bound,
    layer: usize,
) -> Result<LayerOutput> {
    let nt = plan.num_types();
    let dh = cfg.head_dim();
    let inv_scale = 1.0 / cfg.score_divisor();
    let mu = bound.var(paths::MU)?;

    // Per type, per head projections.
    let mut proj: HashMap<(usize, char, usize), Var> = HashMap::new();
    for (ty, &hv) in h.iter().enumerate() {
        let name = &plan.type_names[ty];
        for which in ['K', 'Q', 'M'] {
            for i in 0..cfg.heads {
                let w = bound.var(&paths::proj_weight(layer, name, which, i))?;
                let b = bound.var(&paths::proj_bias(layer, name, which, i))?;
                proj.insert((ty, which, i), linear(tape, hv, w, b));
            }
        }
    }

    let mut hidden = Vec::with_capacity(nt);
    let mut attention = Vec::with_capacity(nt);
    for t in 0..nt {
        let n_t = plan.num_nodes[t];
        let rels = &plan.incoming[t];
        let n_edges: usize = rels.iter().map(|&r| plan.src_idx[r].len()).sum();
        let mut head_outputs = Vec::with_capacity(cfg.heads);
        let mut head_weights = Vec::with_capacity(cfg.heads);
        for i in 0..cfg.heads {
            if n_edges == 0 {
                head_outputs.push(tape.constant(Matrix::zeros((n_t, dh))));
                continue;
            }
            let mut scores = Vec::with_capacity(rels.len());
            let mut messages = Vec::with_capacity(rels.len());
            for &r in rels {
                let (s, _) = plan.rel_ends[r];
                let rel = &plan.rel_names[r];
                let w_att = bound.var(&paths::w_att(layer, rel, i))?;
                let w_mes = bound.var(&paths::w_mes(layer, rel, i))?;

                let kw = tape.matmul(proj[&(s, 'K', i)], w_att);
                let k_e = tape.gather_rows(kw, plan.src_idx[r].clone());
                let q_e = tape.gather_rows(proj[&(t, 'Q', i)], plan.dst_idx[r].clone());
                let raw = tape.row_dot(k_e, q_e);
                let scaled = tape.scale_by(raw, mu, mu_index(nt, s, r, t));
                let score = tape.scale(scaled, inv_scale);
                ensure_finite(tape, score, || {
                    format!("attention scores, layer {layer}, relation '{rel}', head {i}")
                })?;
                scores.push(score);

                let mw = tape.matmul(proj[&(s, 'M', i)], w_mes);
                messages.push(tape.gather_rows(mw, plan.src_idx[r].clone()));
            }
            let all_scores = tape.concat_rows(scores);
            let weights = tape.segment_softmax(all_scores, plan.groups[t].clone(), n_t);
            let all_messages = tape.concat_rows(messages);
            let weighted = tape.mul_col(all_messages, weights);
            head_outputs.push(tape.scatter_rows(weighted, plan.groups[t].clone(), n_t));
            head_weights.push(weights);
        }
        let h_tilde = if head_outputs.len() == 1 {
            head_outputs[0]
        } else {
            tape.concat_cols(head_outputs)
        };
        let name = &plan.type_names[t];
        let w = bound.var(&paths::out_weight(layer, name))?;
        let b = bound.var(&paths::out_bias(layer, name))?;
        let lin = linear(tape, h_tilde, w, b);
        let act = tape.relu(lin);
        let next = tape.add(act, h[t]);
        ensure_finite(tape, next, || format!("hidden state, layer {layer}, node type '{name}'"))?;
        hidden.push(next);
        attention.push(head_weights);
    }
    Ok(LayerOutput { hidden, attention })
}

/// Input projection followed by `depth` layers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn encode_combination_on(
    tape: &mut Tape,
    g: &HetGraph,
    plan: &GraphPlan,
    partition: &ViewPartition,
    combo: &ViewCombination,
    bound: &Bound,
    cfg: &EncoderConfig,
    cache: &mut InputCache,
) -> Result<Vec<Var>> {
    let mut h = project_inputs_on(tape, g, partition, combo, bound, cache)?;
    for layer in 0..cfg.depth {
        h = layer_forward_on(tape, plan, cfg, &h, bound, layer)?.hidden;
    }
    Ok(h)
}

// Plain-matrix entry points. Parameters enter the tape as constants.

/// Projected inputs `H⁽⁰⁾`, one `n_a × h1` matrix per node type.
pub fn project_inputs(
    g: &HetGraph,
    partition: &ViewPartition,
    combo: &ViewCombination,
    params: &ModelParams,
) -> Result<Vec<Matrix>> {
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let vars = project_inputs_on(&mut tape, g, partition, combo, &bound, &mut InputCache::default())?;
    Ok(vars.iter().map(|&v| tape.value(v).clone()).collect())
}

fn bind_hidden(tape: &mut Tape, h: &[Matrix], plan: &GraphPlan, cfg: &EncoderConfig) -> Result<Vec<Var>> {
    if h.len() != plan.num_types() {
        return Err(AheadError::Config(format!(
            "expected hidden states for {} node types, got {}",
            plan.num_types(),
            h.len()
        )));
    }
    for (t, m) in h.iter().enumerate() {
        if m.dim() != (plan.num_nodes[t], cfg.hidden_dim) {
            return Err(AheadError::Config(format!(
                "hidden state for '{}' has shape {:?}, expected ({}, {})",
                plan.type_names[t],
                m.dim(),
                plan.num_nodes[t],
                cfg.hidden_dim
            )));
        }
    }
    Ok(h.iter().map(|m| tape.constant(m.clone())).collect())
}

/// One layer update from `H⁽ˡ⁻¹⁾` to `H⁽ˡ⁾`.
pub fn layer_forward(
    g: &HetGraph,
    params: &ModelParams,
    cfg: &EncoderConfig,
    h: &[Matrix],
    layer: usize,
) -> Result<Vec<Matrix>> {
    let plan = GraphPlan::new(g);
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let hv = bind_hidden(&mut tape, h, &plan, cfg)?;
    let out = layer_forward_on(&mut tape, &plan, cfg, &hv, &bound, layer)?;
    Ok(out.hidden.iter().map(|&v| tape.value(v).clone()).collect())
}

/// Normalized attention weight of one edge for every head.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAttention {
    pub relation: usize,
    pub src: usize,
    pub dst: usize,
    pub weights: Vec<f64>,
}

/// Edge-level attention of one layer, grouped per target node type.
pub fn edge_attention(
    g: &HetGraph,
    params: &ModelParams,
    cfg: &EncoderConfig,
    h: &[Matrix],
    layer: usize,
) -> Result<Vec<Vec<EdgeAttention>>> {
    let plan = GraphPlan::new(g);
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let hv = bind_hidden(&mut tape, h, &plan, cfg)?;
    let out = layer_forward_on(&mut tape, &plan, cfg, &hv, &bound, layer)?;
    let mut result = Vec::with_capacity(plan.num_types());
    for t in 0..plan.num_types() {
        let mut edges = Vec::new();
        for &r in &plan.incoming[t] {
            for (&s, &d) in plan.src_idx[r].iter().zip(plan.dst_idx[r].iter()) {
                edges.push(EdgeAttention {
                    relation: r,
                    src: s,
                    dst: d,
                    weights: Vec::with_capacity(cfg.heads),
                });
            }
        }
        for &w in &out.attention[t] {
            for (e, row) in tape.value(w).rows().into_iter().enumerate() {
                edges[e].weights.push(row[0]);
            }
        }
        result.push(edges);
    }
    Ok(result)
}

/// Final hidden states (`n_a × h1` per type) of one view combination.
pub fn encode_combination(
    g: &HetGraph,
    partition: &ViewPartition,
    combo: &ViewCombination,
    params: &ModelParams,
    cfg: &EncoderConfig,
) -> Result<Vec<Matrix>> {
    cfg.validate()?;
    let plan = GraphPlan::new(g);
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let out = encode_combination_on(
        &mut tape,
        g,
        &plan,
        partition,
        combo,
        &bound,
        cfg,
        &mut InputCache::default(),
    )?;
    Ok(out.iter().map(|&v| tape.value(v).clone()).collect())
}
