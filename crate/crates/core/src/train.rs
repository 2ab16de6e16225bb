//! Parameter initialization, the full forward pass, Adam training,
//! finite-difference gradient checks and model persistence.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::aggregate::{self, EmbeddingSet, OutProjection};
use crate::decode::{self, DecoderSet, LossNorm, Reconstruction};
use crate::encoder::{self, EncoderConfig, GraphPlan, InputCache};
use crate::error::{AheadError, Result};
use crate::hetgraph::{schema_hash, HetGraph, Matrix, NodeTypeSpec};
use crate::params::{self, Bound, ModelHeader, ModelParams};
use crate::preprocess::ViewPartition;
use crate::rng::seeded;
use crate::tape::{Tape, Var};

const INIT_STREAM: u64 = 1;
const GRADCHECK_STREAM: u64 = 2;
const FIXTURE_STREAM: u64 = 3;

/// Architecture and loss choices. Stored in the model file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub out_projection: OutProjection,
    pub loss: LossNorm,
    pub decoders: DecoderSet,
    pub node_budget: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            out_projection: OutProjection::Shared,
            loss: LossNorm::Frobenius,
            decoders: DecoderSet::default(),
            node_budget: decode::DEFAULT_NODE_BUDGET,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoders.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-3,
            weight_decay: 1e-5,
            max_epochs: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AheadError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be a finite non-negative number");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be a finite non-negative number");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return bad("moment decay rates must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

fn check_partition(g: &HetGraph, partition: &ViewPartition) -> Result<()> {
    if partition.columns.len() != g.num_types() {
        return Err(AheadError::Config(format!(
            "view partition covers {} node types, graph has {}",
            partition.columns.len(),
            g.num_types()
        )));
    }
    for (ty, t) in g.node_types.iter().enumerate() {
        if partition.num_views(ty) != t.num_views() {
            return Err(AheadError::Config(format!(
                "node type '{}': partition has {} views, graph declares {}",
                t.name,
                partition.num_views(ty),
                t.num_views()
            )));
        }
    }
    Ok(())
}

/// Glorot-uniform matrices, zero biases, `μ = 1`, `α = 0`, `W_T = 1`.
pub fn init_params(g: &HetGraph, partition: &ViewPartition, cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    check_partition(g, partition)?;
    let mut rng = seeded(seed, INIT_STREAM);
    let mut p = ModelParams::new();
    let k = encoder::enumerate_view_combinations(g).len();
    encoder::init_encoder(g, &cfg.encoder, &mut rng, &mut p);
    aggregate::init_aggregator(
        g,
        cfg.encoder.hidden_dim,
        cfg.encoder.out_dim,
        k,
        cfg.out_projection,
        &mut rng,
        &mut p,
    );
    decode::init_decoder(g, cfg.encoder.out_dim, &mut rng, &mut p);
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub attribute: f64,
    pub structure: f64,
    pub node_type: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: LossBreakdown,
    pub reconstruction: Reconstruction,
    pub embeddings: EmbeddingSet,
}

struct Built {
    total: Var,
    attribute: Var,
    structure: Var,
    node_type: Var,
    adj: Vec<(usize, Var)>,
    attrs: Vec<Var>,
    node_types: Var,
    per_combination: Vec<Vec<Var>>,
    aggregated: Vec<Var>,
    weights: Var,
}

fn build(
    tape: &mut Tape,
    g: &HetGraph,
    plan: &GraphPlan,
    partition: &ViewPartition,
    bound: &Bound,
    cfg: &ModelConfig,
) -> Result<Built> {
    let combos = encoder::enumerate_view_combinations(g);
    let mut cache = InputCache::default();
    let mut per_combination = Vec::with_capacity(combos.len());
    for combo in &combos {
        let h = encoder::encode_combination_on(tape, g, plan, partition, combo, bound, &cfg.encoder, &mut cache)?;
        per_combination.push(aggregate::out_project_on(
            tape,
            &h,
            &plan.type_names,
            cfg.out_projection,
            bound,
        )?);
    }
    let weights = aggregate::view_weights_on(tape, bound)?;
    let z = aggregate::aggregate_on(tape, &per_combination, weights)?;

    let adj = decode::reconstruct_structure_on(tape, &z, g);
    let attrs = decode::reconstruct_attributes_on(tape, &z, g, bound)?;
    let node_types = decode::reconstruct_node_types_on(tape, &z, g, bound)?;

    let s_terms: Vec<Var> = adj
        .iter()
        .map(|&(r, a_hat)| decode::residual_loss_on(tape, g.dense_adjacency(r), a_hat, cfg.loss))
        .collect();
    let structure = decode::sum_or_zero(tape, s_terms);
    let a_terms: Vec<Var> = g
        .attrs
        .iter()
        .zip(&attrs)
        .map(|(x, &x_hat)| decode::residual_loss_on(tape, x.clone(), x_hat, cfg.loss))
        .collect();
    let attribute = decode::sum_or_zero(tape, a_terms);
    let node_type = decode::residual_loss_on(tape, decode::node_type_onehot(g), node_types, cfg.loss);

    let mut enabled = Vec::with_capacity(3);
    if cfg.decoders.attribute {
        enabled.push(attribute);
    }
    if cfg.decoders.structure {
        enabled.push(structure);
    }
    if cfg.decoders.node_type {
        enabled.push(node_type);
    }
    let total = decode::sum_or_zero(tape, enabled);
    Ok(Built {
        total,
        attribute,
        structure,
        node_type,
        adj,
        attrs,
        node_types,
        per_combination,
        aggregated: z,
        weights,
    })
}

fn breakdown(tape: &Tape, b: &Built, cfg: &ModelConfig) -> Result<LossBreakdown> {
    let loss = LossBreakdown {
        total: tape.scalar(b.total),
        attribute: tape.scalar(b.attribute),
        structure: tape.scalar(b.structure),
        node_type: tape.scalar(b.node_type),
    };
    let terms = [
        ("attribute loss", loss.attribute, cfg.decoders.attribute),
        ("structure loss", loss.structure, cfg.decoders.structure),
        ("node-type loss", loss.node_type, cfg.decoders.node_type),
    ];
    for (name, v, on) in terms {
        if on && !v.is_finite() {
            return Err(AheadError::Numerical(format!("{name} is {v}")));
        }
    }
    Ok(loss)
}

fn prepare(g: &HetGraph, partition: &ViewPartition, cfg: &ModelConfig) -> Result<GraphPlan> {
    cfg.validate()?;
    check_partition(g, partition)?;
    decode::check_node_budget(g, cfg.node_budget)?;
    Ok(GraphPlan::new(g))
}

/// Encoder, aggregator and decoders on the current parameters. The total
/// only includes the enabled decoders; the breakdown reports all three.
pub fn forward_loss(
    g: &HetGraph,
    partition: &ViewPartition,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<ForwardOutput> {
    let plan = prepare(g, partition, cfg)?;
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let b = build(&mut tape, g, &plan, partition, &bound, cfg)?;
    let loss = breakdown(&tape, &b, cfg)?;
    let value = |v: Var| tape.value(v).clone();
    Ok(ForwardOutput {
        loss,
        reconstruction: Reconstruction {
            adj: b.adj.iter().map(|&(r, v)| (r, value(v))).collect(),
            attrs: b.attrs.iter().map(|&v| value(v)).collect(),
            node_types: value(b.node_types),
        },
        embeddings: EmbeddingSet {
            per_combination: b
                .per_combination
                .iter()
                .map(|zs| zs.iter().map(|&v| value(v)).collect())
                .collect(),
            aggregated: b.aggregated.iter().map(|&v| value(v)).collect(),
            weights: tape.value(b.weights).iter().copied().collect(),
        },
    })
}

/// Loss and gradient of every parameter, in parameter order. Parameters the
/// loss does not depend on get a zero gradient.
pub fn loss_and_gradients(
    g: &HetGraph,
    partition: &ViewPartition,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let plan = prepare(g, partition, cfg)?;
    loss_and_gradients_with(g, &plan, partition, params, cfg)
}

fn loss_and_gradients_with(
    g: &HetGraph,
    plan: &GraphPlan,
    partition: &ViewPartition,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, true);
    let b = build(&mut tape, g, plan, partition, &bound, cfg)?;
    let loss = breakdown(&tape, &b, cfg)?;
    let grads = tape.backward(b.total);
    let out = bound
        .iter()
        .map(|(_, v)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(tape.value(v).dim()))
        })
        .collect();
    Ok((loss, out))
}

struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|(_, p)| Matrix::zeros(p.dim())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[Matrix], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let lr = cfg.learning_rate;
        for (((_, p), g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g + cfg.weight_decay * *p;
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
                });
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Loss at the start of each epoch, before that epoch's update.
    pub trace: Vec<LossBreakdown>,
}

impl TrainOutcome {
    pub fn total_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|l| l.total).collect()
    }
}

/// Full-batch Adam on `L`, starting from [`init_params`] with the train seed.
pub fn train_model(
    g: &HetGraph,
    partition: &ViewPartition,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = init_params(g, partition, model, train.seed)?;
    train_from(g, partition, params, model, train)
}

pub fn train_from(
    g: &HetGraph,
    partition: &ViewPartition,
    mut params: ModelParams,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    train.validate()?;
    let plan = prepare(g, partition, model)?;
    let mut adam = Adam::new(&params);
    let mut trace = Vec::with_capacity(train.max_epochs);
    for epoch in 0..train.max_epochs {
        let (loss, grads) = loss_and_gradients_with(g, &plan, partition, &params, model)
            .map_err(|e| diverged(epoch, e))?;
        if !loss.total.is_finite() {
            return Err(diverged(epoch, AheadError::Numerical(format!("loss is {}", loss.total))));
        }
        trace.push(loss);
        adam.step(&mut params, &grads, train);
        if let Some((path, _)) = params.iter().find(|(_, m)| m.iter().any(|v| !v.is_finite())) {
            return Err(diverged(
                epoch,
                AheadError::Numerical(format!("parameter '{path}' became non-finite")),
            ));
        }
    }
    Ok(TrainOutcome { params, trace })
}

fn diverged(epoch: usize, e: AheadError) -> AheadError {
    match e {
        AheadError::Numerical(msg) => AheadError::Numerical(format!("training diverged at epoch {epoch}: {msg}")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradSample {
    pub path: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub samples: Vec<GradSample>,
}

pub const FD_STEP: f64 = 1e-6;

/// Compares reverse-mode gradients with central differences at
/// `sample_size` scalar parameters drawn without replacement.
pub fn grad_check(
    g: &HetGraph,
    partition: &ViewPartition,
    params: &ModelParams,
    cfg: &ModelConfig,
    sample_size: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let plan = prepare(g, partition, cfg)?;
    let (_, grads) = loss_and_gradients_with(g, &plan, partition, params, cfg)?;

    let sizes: Vec<(String, (usize, usize))> = params.iter().map(|(k, m)| (k.to_string(), m.dim())).collect();
    let total: usize = sizes.iter().map(|(_, d)| d.0 * d.1).sum();
    let mut rng = seeded(seed, GRADCHECK_STREAM);
    let picks = index::sample(&mut rng, total, sample_size.min(total));

    let eval = |p: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, p, false);
        let b = build(&mut tape, g, &plan, partition, &bound, cfg)?;
        Ok(tape.scalar(b.total))
    };

    let mut work = params.clone();
    let mut samples = Vec::with_capacity(picks.len());
    let mut max_rel_error: f64 = 0.0;
    let mut picks: Vec<usize> = picks.into_iter().collect();
    picks.sort_unstable();
    for flat in picks {
        let (mut pi, mut offset) = (0, flat);
        while offset >= sizes[pi].1 .0 * sizes[pi].1 .1 {
            offset -= sizes[pi].1 .0 * sizes[pi].1 .1;
            pi += 1;
        }
        let (path, (_, cols)) = &sizes[pi];
        let idx = (offset / cols, offset % cols);
        let orig = params.get(path)?[idx];
        work.get_mut(path)?[idx] = orig + FD_STEP;
        let plus = eval(&work)?;
        work.get_mut(path)?[idx] = orig - FD_STEP;
        let minus = eval(&work)?;
        work.get_mut(path)?[idx] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = grads[pi][idx];
        let rel_error = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
        max_rel_error = max_rel_error.max(rel_error);
        samples.push(GradSample {
            path: path.clone(),
            index: idx,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport { max_rel_error, samples })
}

/// Small two-type graph for gradient checks: 6 `paper` nodes with views of
/// width 2 and 3, 5 `author` nodes with a single view, relations
/// `writes: author → paper` and `cites: paper → paper`. Attributes are drawn
/// away from zero so relu pre-activations avoid the kink.
pub fn tiny_fixture(seed: u64) -> (HetGraph, ModelConfig) {
    let mut rng = seeded(seed, FIXTURE_STREAM);
    let types = vec![
        NodeTypeSpec::new("paper", 6, vec![2, 3]),
        NodeTypeSpec::new("author", 5, vec![2]),
    ];
    let u = Uniform::new(0.2, 1.5).expect("valid range");
    let attrs: Vec<Matrix> = types
        .iter()
        .map(|t| Matrix::from_shape_fn((t.num_nodes, t.attr_dim), |_| u.sample(&mut rng)))
        .collect();
    let mut g = HetGraph::new(types, &[("writes", "author", "paper"), ("cites", "paper", "paper")], attrs)
        .expect("fixture schema is valid");
    let writes = g.relation_index("writes").expect("declared");
    let cites = g.relation_index("cites").expect("declared");
    let mut w = Vec::new();
    for a in 0..5 {
        for p in 0..6 {
            if (a + p) % 3 == 0 || rng.random_bool(0.2) {
                w.push((a, p));
            }
        }
    }
    let mut c = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            if i != j && rng.random_bool(0.3) {
                c.push((i, j));
            }
        }
    }
    g.set_edges(writes, w).expect("in range");
    g.set_edges(cites, c).expect("in range");
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            hidden_dim: 8,
            out_dim: 4,
            heads: 2,
            depth: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    (g, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn save_model(
    path: impl AsRef<Path>,
    g: &HetGraph,
    model: &ModelConfig,
    train: &TrainConfig,
    p: &ModelParams,
) -> Result<()> {
    let header = ModelHeader {
        format_version: params::FORMAT_VERSION,
        schema_hash: schema_hash(g),
        config: serde_json::to_value(SavedConfig {
            model: model.clone(),
            train: train.clone(),
        })
        .expect("config serializes"),
    };
    params::save_model(path, &header, p)
}

/// Loads a model file and checks that it was trained on a graph with the
/// same schema as `g`.
pub fn load_model(path: impl AsRef<Path>, g: &HetGraph) -> Result<(SavedConfig, ModelParams)> {
    let (header, p) = params::load_model(path)?;
    let expected = schema_hash(g);
    if header.schema_hash != expected {
        return Err(AheadError::Model(format!(
            "model was trained on schema {}, data has schema {expected}",
            header.schema_hash
        )));
    }
    let cfg: SavedConfig =
        serde_json::from_value(header.config).map_err(|e| AheadError::Model(format!("bad config in header: {e}")))?;
    Ok((cfg, p))
}
