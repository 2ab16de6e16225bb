//! Structure, attribute and node-type decoders, reconstruction losses and
//! anomaly scores.

use std::fs;
use std::path::Path;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::error::{AheadError, Result};
use crate::hetgraph::bundle::format_f64;
use crate::hetgraph::{global_index, HetGraph, Matrix};
use crate::params::{Bound, ModelParams};
use crate::tape::{Tape, Var};

/// Smoothing added under the square root of Frobenius losses.
pub const NORM_EPS: f64 = 1e-12;

pub const DEFAULT_NODE_BUDGET: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// `sqrt(Σ r² + ε)`
    #[default]
    Frobenius,
    /// `Σ r²`
    Squared,
}

impl LossNorm {
    fn of(self, residual: impl Iterator<Item = f64>) -> f64 {
        let ss: f64 = residual.map(|r| r * r).sum();
        match self {
            LossNorm::Frobenius => (ss + NORM_EPS).sqrt(),
            LossNorm::Squared => ss,
        }
    }
}

/// Which decoders contribute to the loss and the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderSet {
    pub structure: bool,
    pub attribute: bool,
    pub node_type: bool,
}

impl Default for DecoderSet {
    fn default() -> Self {
        DecoderSet {
            structure: true,
            attribute: true,
            node_type: true,
        }
    }
}

impl DecoderSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.structure || self.attribute || self.node_type) {
            return Err(AheadError::Config("at least one decoder must be enabled".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            lambda1: 0.4,
            lambda2: 0.4,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.lambda1)
            && (0.0..=1.0).contains(&self.lambda2)
            && self.lambda1 + self.lambda2 <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(AheadError::Config(format!(
                "score weights must satisfy λ1, λ2 ∈ [0, 1] and λ1 + λ2 ≤ 1 (got {}, {})",
                self.lambda1, self.lambda2
            )))
        }
    }

    /// `(structure, attribute, node type)` weights after dropping disabled
    /// decoders and rescaling the rest proportionally to sum to one.
    pub fn effective(&self, decoders: DecoderSet) -> Result<[f64; 3]> {
        self.validate()?;
        decoders.validate()?;
        let raw = [
            self.lambda1,
            self.lambda2,
            (1.0 - self.lambda1 - self.lambda2).max(0.0),
        ];
        let on = [decoders.structure, decoders.attribute, decoders.node_type];
        if on.iter().all(|&b| b) {
            return Ok(raw);
        }
        let mut w = [0.0; 3];
        for i in 0..3 {
            if on[i] {
                w[i] = raw[i];
            }
        }
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|x| *x /= total);
        } else {
            let n = on.iter().filter(|&&b| b).count() as f64;
            for i in 0..3 {
                w[i] = if on[i] { 1.0 / n } else { 0.0 };
            }
        }
        Ok(w)
    }
}

pub mod paths {
    pub fn attr_weight(ty: &str) -> String {
        format!("decode.attr.type:{ty}.weight")
    }
    pub fn attr_bias(ty: &str) -> String {
        format!("decode.attr.type:{ty}.bias")
    }
    pub fn type_weight(ty: &str) -> String {
        format!("decode.node_type.type:{ty}.weight")
    }
    pub fn type_bias(ty: &str) -> String {
        format!("decode.node_type.type:{ty}.bias")
    }
    pub const TYPE_ATTENTION: &str = "decode.type_attention";
}

pub fn init_decoder(g: &HetGraph, out_dim: usize, rng: &mut impl rand::Rng, params: &mut ModelParams) {
    let na = g.num_types();
    for t in &g.node_types {
        params.insert(paths::attr_weight(&t.name), crate::encoder::glorot(rng, out_dim, t.attr_dim));
        params.insert(paths::attr_bias(&t.name), Matrix::zeros((t.num_nodes, t.attr_dim)));
    }
    for t in &g.node_types {
        params.insert(paths::type_weight(&t.name), crate::encoder::glorot(rng, out_dim, na));
        params.insert(paths::type_bias(&t.name), Matrix::zeros((1, na)));
    }
    params.insert(paths::TYPE_ATTENTION, Matrix::ones((1, na)));
}

/// Errors when a node type is too large for dense reconstruction.
pub fn check_node_budget(g: &HetGraph, budget: usize) -> Result<()> {
    for t in &g.node_types {
        if t.num_nodes > budget {
            return Err(AheadError::Config(format!(
                "node type '{}' has {} nodes, above the dense reconstruction budget of {budget}",
                t.name, t.num_nodes
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// `(declared relation index, Ã)`.
    pub adj: Vec<(usize, Matrix)>,
    /// `X̃` per node type.
    pub attrs: Vec<Matrix>,
    /// `T̃`, rows in global node order.
    pub node_types: Matrix,
}

// Tape builders.

pub(crate) fn reconstruct_structure_on(tape: &mut Tape, z: &[Var], g: &HetGraph) -> Vec<(usize, Var)> {
    g.declared_relations()
        .map(|r| {
            let (s, d) = g.endpoints(r);
            let logits = tape.matmul_t(z[s], z[d]);
            (r, tape.sigmoid(logits))
        })
        .collect()
}

pub(crate) fn reconstruct_attributes_on(
    tape: &mut Tape,
    z: &[Var],
    g: &HetGraph,
    bound: &Bound,
) -> Result<Vec<Var>> {
    g.node_types
        .iter()
        .zip(z)
        .map(|(t, &zt)| {
            let w = bound.var(&paths::attr_weight(&t.name))?;
            let b = bound.var(&paths::attr_bias(&t.name))?;
            if tape.value(b).dim() != (t.num_nodes, t.attr_dim) {
                return Err(AheadError::Model(format!(
                    "attribute bias for '{}' has shape {:?}, graph needs ({}, {})",
                    t.name,
                    tape.value(b).dim(),
                    t.num_nodes,
                    t.attr_dim
                )));
            }
            let y = tape.matmul(zt, w);
            let pre = tape.add(y, b);
            Ok(tape.relu(pre))
        })
        .collect()
}

/// Stacked `|V| × |A|` matrix of `softmax(W_T ⊙ T-Linear_τ(Z[v]))` rows.
pub(crate) fn reconstruct_node_types_on(
    tape: &mut Tape,
    z: &[Var],
    g: &HetGraph,
    bound: &Bound,
) -> Result<Var> {
    let attention = bound.var(paths::TYPE_ATTENTION)?;
    let mut rows = Vec::with_capacity(z.len());
    for (t, &zt) in g.node_types.iter().zip(z) {
        let w = bound.var(&paths::type_weight(&t.name))?;
        let b = bound.var(&paths::type_bias(&t.name))?;
        let y = tape.matmul(zt, w);
        let logits = tape.add_row(y, b);
        let modulated = tape.mul_row(logits, attention);
        rows.push(tape.softmax_rows(modulated));
    }
    Ok(if rows.len() == 1 {
        rows[0]
    } else {
        tape.concat_rows(rows)
    })
}

pub(crate) fn residual_loss_on(tape: &mut Tape, target: Matrix, recon: Var, norm: LossNorm) -> Var {
    let t = tape.constant(target);
    let diff = tape.sub(t, recon);
    match norm {
        LossNorm::Frobenius => tape.norm(diff, NORM_EPS),
        LossNorm::Squared => tape.sum_squares(diff),
    }
}

pub(crate) fn sum_or_zero(tape: &mut Tape, terms: Vec<Var>) -> Var {
    if terms.is_empty() {
        tape.constant(Matrix::zeros((1, 1)))
    } else {
        tape.sum_scalars(terms)
    }
}

// Plain-matrix entry points.

fn bind_z(tape: &mut Tape, z: &[Matrix]) -> Vec<Var> {
    z.iter().map(|m| tape.constant(m.clone())).collect()
}

/// `Ã_r = sigmoid(Z_src · Z_dstᵀ)` for every declared relation.
pub fn reconstruct_structure(z: &[Matrix], g: &HetGraph) -> Vec<(usize, Matrix)> {
    let mut tape = Tape::new();
    let zv = bind_z(&mut tape, z);
    reconstruct_structure_on(&mut tape, &zv, g)
        .into_iter()
        .map(|(r, v)| (r, tape.value(v).clone()))
        .collect()
}

pub fn structure_loss(g: &HetGraph, recon: &Reconstruction, norm: LossNorm) -> f64 {
    recon
        .adj
        .iter()
        .map(|(r, a_hat)| {
            let a = g.dense_adjacency(*r);
            norm.of(a.iter().zip(a_hat.iter()).map(|(x, y)| x - y))
        })
        .sum()
}

/// `X̃_τ = relu(Z_τ W + B)` per node type.
pub fn reconstruct_attributes(z: &[Matrix], g: &HetGraph, params: &ModelParams) -> Result<Vec<Matrix>> {
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let zv = bind_z(&mut tape, z);
    let out = reconstruct_attributes_on(&mut tape, &zv, g, &bound)?;
    Ok(out.iter().map(|&v| tape.value(v).clone()).collect())
}

pub fn attribute_loss(g: &HetGraph, recon: &Reconstruction, norm: LossNorm) -> f64 {
    g.attrs
        .iter()
        .zip(&recon.attrs)
        .map(|(x, x_hat)| norm.of(x.iter().zip(x_hat.iter()).map(|(a, b)| a - b)))
        .sum()
}

/// One-hot node-type matrix, rows in global node order.
pub fn node_type_onehot(g: &HetGraph) -> Matrix {
    let mut t = Matrix::zeros((g.total_nodes(), g.num_types()));
    let mut row = 0;
    for (ty, spec) in g.node_types.iter().enumerate() {
        for _ in 0..spec.num_nodes {
            t[[row, ty]] = 1.0;
            row += 1;
        }
    }
    t
}

pub fn reconstruct_node_types(z: &[Matrix], g: &HetGraph, params: &ModelParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let zv = bind_z(&mut tape, z);
    let v = reconstruct_node_types_on(&mut tape, &zv, g, &bound)?;
    Ok(tape.value(v).clone())
}

pub fn node_type_loss(t: &Matrix, t_hat: &Matrix, norm: LossNorm) -> f64 {
    norm.of(t.iter().zip(t_hat.iter()).map(|(a, b)| a - b))
}

/// `L = L_a + L_s + L_T`.
pub fn total_loss(attribute: f64, structure: f64, node_type: f64) -> f64 {
    attribute + structure + node_type
}

/// Per-node residual norms feeding the anomaly score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub structure: f64,
    pub attribute: f64,
    pub node_type: f64,
}

fn l2(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|x| x * x).sum::<f64>().sqrt()
}

/// Residuals per node, in global order. The structure residual sums, over
/// declared relations, the row norm where the node is the source and the
/// column norm where it is the target.
pub fn residuals(g: &HetGraph, recon: &Reconstruction) -> Result<Vec<Residuals>> {
    let idx = global_index(g)?;
    let mut out = vec![
        Residuals {
            structure: 0.0,
            attribute: 0.0,
            node_type: 0.0,
        };
        idx.len()
    ];
    for (r, a_hat) in &recon.adj {
        let (s, d) = g.endpoints(*r);
        let a = g.dense_adjacency(*r);
        let diff = &a - a_hat;
        for (i, row) in diff.axis_iter(Axis(0)).enumerate() {
            out[idx.to_global(s, i)].structure += l2(row.iter().copied());
        }
        for (j, col) in diff.axis_iter(Axis(1)).enumerate() {
            out[idx.to_global(d, j)].structure += l2(col.iter().copied());
        }
    }
    for (ty, (x, x_hat)) in g.attrs.iter().zip(&recon.attrs).enumerate() {
        for (i, (xr, hr)) in x.rows().into_iter().zip(x_hat.rows()).enumerate() {
            out[idx.to_global(ty, i)].attribute = l2(xr.iter().zip(hr.iter()).map(|(a, b)| a - b));
        }
    }
    let t = node_type_onehot(g);
    for (v, (tr, hr)) in t.rows().into_iter().zip(recon.node_types.rows()).enumerate() {
        out[v].node_type = l2(tr.iter().zip(hr.iter()).map(|(a, b)| a - b));
    }
    Ok(out)
}

pub fn weighted_score(r: &Residuals, w: [f64; 3]) -> f64 {
    w[0] * r.structure + w[1] * r.attribute + w[2] * r.node_type
}

/// `s(v) = λ1·r_struct + λ2·r_attr + (1 − λ1 − λ2)·r_type`, global order.
pub fn anomaly_score(g: &HetGraph, recon: &Reconstruction, weights: ScoreWeights) -> Result<Vec<f64>> {
    let w = weights.effective(DecoderSet::default())?;
    Ok(residuals(g, recon)?.iter().map(|r| weighted_score(r, w)).collect())
}

/// `p(v) = s(v) / max s`; all zeros when every score is zero.
pub fn anomaly_probability(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| s / max).collect()
}

/// 1-based ranks by descending score, ties broken by global index.
pub fn ranks(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut rank = vec![0; scores.len()];
    for (pos, &v) in order.iter().enumerate() {
        rank[v] = pos + 1;
    }
    rank
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub node_type: String,
    pub local_index: usize,
    pub score: f64,
    pub probability: f64,
    pub rank: usize,
    pub residuals: Residuals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// One row per node, global order.
    pub rows: Vec<ScoreRow>,
}

impl ScoreReport {
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }
}

pub fn score_report(
    g: &HetGraph,
    recon: &Reconstruction,
    weights: ScoreWeights,
    decoders: DecoderSet,
) -> Result<ScoreReport> {
    let w = weights.effective(decoders)?;
    let res = residuals(g, recon)?;
    let scores: Vec<f64> = res.iter().map(|r| weighted_score(r, w)).collect();
    let prob = anomaly_probability(&scores);
    let rank = ranks(&scores);
    let idx = global_index(g)?;
    let rows = (0..scores.len())
        .map(|v| {
            let (ty, local) = idx.to_local(v).expect("in range");
            ScoreRow {
                node_type: g.node_types[ty].name.clone(),
                local_index: local,
                score: scores[v],
                probability: prob[v],
                rank: rank[v],
                residuals: res[v],
            }
        })
        .collect();
    Ok(ScoreReport { rows })
}

pub const SCORES_HEADER: &str = "type,local_index,score,probability,rank,r_struct,r_attr,r_type";

pub fn write_scores_csv(report: &ScoreReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(report.rows.len() * 120);
    s.push_str(SCORES_HEADER);
    s.push('\n');
    for r in &report.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.node_type,
            r.local_index,
            format_f64(r.score),
            format_f64(r.probability),
            r.rank,
            format_f64(r.residuals.structure),
            format_f64(r.residuals.attribute),
            format_f64(r.residuals.node_type),
        ));
    }
    fs::write(path, s).map_err(|e| AheadError::io(path, e))
}

/// Reads `(type, local_index, score)` from a scores file.
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<(String, usize, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AheadError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if n == 0 {
            if line.trim() != SCORES_HEADER {
                return Err(AheadError::parse(path, line_no, "missing scores header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(AheadError::parse(path, line_no, format!("expected 8 columns, found {}", f.len())));
        }
        let local = f[1]
            .parse()
            .map_err(|_| AheadError::parse(path, line_no, format!("invalid local index '{}'", f[1])))?;
        let score: f64 = f[2]
            .parse()
            .map_err(|_| AheadError::parse(path, line_no, format!("invalid score '{}'", f[2])))?;
        out.push((f[0].to_string(), local, score));
    }
    Ok(out)
}
