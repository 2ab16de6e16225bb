//! Train → score → evaluate pipeline and the experiment grids built on it:
//! decoder ablation, anomaly-count robustness, and λ / depth / learning-rate
//! sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decode::{self, DecoderSet, ScoreReport, ScoreWeights};
use crate::error::{AheadError, Result};
use crate::hetgraph::{self, AnomalyKind, HetGraph, NodeLabel};
use crate::inject::{self, InjectionConfig};
use crate::metrics;
use crate::params::ModelParams;
use crate::plot;
use crate::preprocess::ViewPartition;
use crate::rng::seeded;
use crate::train::{self, ModelConfig, TrainConfig};

const CONTROL_STREAM: u64 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub weights: ScoreWeights,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.weights.effective(self.model.decoders).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub auc_by_kind: BTreeMap<String, f64>,
    /// Anomaly counts per kind plus `"total"`.
    pub n_anomalies: BTreeMap<String, usize>,
    pub n_nodes: usize,
    pub seed: u64,
    pub config: serde_json::Value,
    pub wall_seconds: f64,
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, s + "\n").map_err(|e| AheadError::io(path, e))
    }
}

pub fn anomaly_counts(labels: &[NodeLabel]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for kind in [AnomalyKind::Attribute, AnomalyKind::Structural] {
        m.insert(
            kind.as_str().to_string(),
            labels.iter().filter(|l| l.is_anomaly && l.kind == kind).count(),
        );
    }
    m.insert("total".into(), labels.iter().filter(|l| l.is_anomaly).count());
    m
}

/// AUC of `scores` (global node order) against `labels`.
pub fn evaluate(
    scores: &[f64],
    labels: &[NodeLabel],
    seed: u64,
    config: serde_json::Value,
    wall_seconds: f64,
) -> Result<MetricsReport> {
    let flags: Vec<bool> = labels.iter().map(|l| l.is_anomaly).collect();
    Ok(MetricsReport {
        auc: metrics::auc(scores, &flags)?,
        auc_by_kind: metrics::auc_by_kind(scores, labels)?,
        n_anomalies: anomaly_counts(labels),
        n_nodes: labels.len(),
        seed,
        config,
        wall_seconds,
    })
}

pub fn flat_labels(g: &HetGraph) -> Vec<NodeLabel> {
    g.labels_or_normal().into_iter().flatten().collect()
}

/// Scores every node of `g` with trained parameters.
pub fn score_model(
    g: &HetGraph,
    params: &ModelParams,
    model: &ModelConfig,
    weights: ScoreWeights,
) -> Result<ScoreReport> {
    let part = ViewPartition::of(g);
    let out = train::forward_loss(g, &part, params, model)?;
    decode::score_report(g, &out.reconstruction, weights, model.decoders)
}

/// Joins a scores file with a labels file on `(type, local_index)`. Scored
/// nodes without a label row count as normal; label rows for unscored nodes
/// are an error.
pub fn evaluate_files(scores_path: &Path, labels_path: &Path) -> Result<MetricsReport> {
    let start = Instant::now();
    let scored = decode::read_scores_csv(scores_path)?;
    let mut index = BTreeMap::new();
    for (i, (ty, local, _)) in scored.iter().enumerate() {
        if index.insert((ty.as_str(), *local), i).is_some() {
            return Err(AheadError::parse(scores_path, i + 2, format!("duplicate row for {ty}:{local}")));
        }
    }
    let mut labels = vec![NodeLabel::NORMAL; scored.len()];
    for row in hetgraph::read_label_rows(labels_path)? {
        let &i = index.get(&(row.node_type.as_str(), row.local_index)).ok_or_else(|| {
            AheadError::parse(
                labels_path,
                row.line,
                format!("no score for {}:{}", row.node_type, row.local_index),
            )
        })?;
        labels[i] = row.label;
    }
    let scores: Vec<f64> = scored.iter().map(|r| r.2).collect();
    let config = serde_json::json!({
        "scores": scores_path.display().to_string(),
        "labels": labels_path.display().to_string(),
    });
    evaluate(&scores, &labels, 0, config, start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub params: ModelParams,
    pub loss_trace: Vec<f64>,
    pub scores: ScoreReport,
    pub metrics: MetricsReport,
}

/// Trains on `g`, scores it and evaluates against its labels. With `out`,
/// writes `model.bin`, `scores.csv`, `metrics.json` and `loss.csv` there.
pub fn run_pipeline(g: &HetGraph, cfg: &PipelineConfig, out: Option<&Path>) -> Result<PipelineOutcome> {
    cfg.validate()?;
    if g.labels.is_none() {
        return Err(AheadError::Config("the bundle has no labels to evaluate against".into()));
    }
    let start = Instant::now();
    let part = ViewPartition::of(g);
    let trained = train::train_model(g, &part, &cfg.model, &cfg.train).map_err(|e| e.in_stage("train"))?;
    let scores = score_model(g, &trained.params, &cfg.model, cfg.weights).map_err(|e| e.in_stage("score"))?;
    let config = serde_json::to_value(cfg).expect("config serializes");
    let metrics = evaluate(
        &scores.scores(),
        &flat_labels(g),
        cfg.train.seed,
        config,
        start.elapsed().as_secs_f64(),
    )
    .map_err(|e| e.in_stage("eval"))?;
    let loss_trace = trained.total_trace();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| AheadError::io(dir, e))?;
        train::save_model(dir.join("model.bin"), g, &cfg.model, &cfg.train, &trained.params)?;
        decode::write_scores_csv(&scores, dir.join("scores.csv"))?;
        metrics.write_json(&dir.join("metrics.json"))?;
        write_loss_csv(&dir.join("loss.csv"), &trained.trace)?;
    }
    Ok(PipelineOutcome {
        params: trained.params,
        loss_trace,
        scores,
        metrics,
    })
}

fn write_loss_csv(path: &Path, trace: &[train::LossBreakdown]) -> Result<()> {
    let mut s = String::from("epoch,total,attribute,structure,node_type\n");
    for (e, l) in trace.iter().enumerate() {
        s.push_str(&format!("{e},{},{},{},{}\n", l.total, l.attribute, l.structure, l.node_type));
    }
    fs::write(path, s).map_err(|e| AheadError::io(path, e))
}

/// AUC of seeded uniform noise scores against the labels of `g`.
pub fn random_control_auc(g: &HetGraph, seed: u64) -> Result<f64> {
    let labels = flat_labels(g);
    let mut rng = seeded(seed, CONTROL_STREAM);
    let scores: Vec<f64> = (0..labels.len()).map(|_| rng.random::<f64>()).collect();
    let flags: Vec<bool> = labels.iter().map(|l| l.is_anomaly).collect();
    metrics::auc(&scores, &flags)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| AheadError::io(path, e))
}

// Ablation.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    MinusStructure,
    MinusAttribute,
    MinusNodeType,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::MinusStructure,
        Variant::MinusAttribute,
        Variant::MinusNodeType,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MinusStructure => "minus_structure",
            Variant::MinusAttribute => "minus_attribute",
            Variant::MinusNodeType => "minus_node_type",
        }
    }

    pub fn decoders(self) -> DecoderSet {
        let mut d = DecoderSet::default();
        match self {
            Variant::Full => {}
            Variant::MinusStructure => d.structure = false,
            Variant::MinusAttribute => d.attribute = false,
            Variant::MinusNodeType => d.node_type = false,
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub label: String,
    pub seed: u64,
    pub auc: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub rows: Vec<RunRow>,
    /// Mean AUC per grid label, in grid order; `None` when every run was skipped.
    pub means: Vec<(String, Option<f64>)>,
}

impl GridSummary {
    fn from_rows(order: &[String], rows: Vec<RunRow>) -> Self {
        let means = order
            .iter()
            .map(|label| {
                let v: Vec<f64> = rows.iter().filter(|r| &r.label == label).filter_map(|r| r.auc).collect();
                (label.clone(), if v.is_empty() { None } else { Some(mean(&v)) })
            })
            .collect();
        GridSummary { rows, means }
    }

    pub fn mean_of(&self, label: &str) -> Option<f64> {
        self.means.iter().find(|(l, _)| l == label).and_then(|(_, m)| *m)
    }

    /// Largest minus smallest mean AUC across grid points that ran.
    pub fn spread(&self) -> f64 {
        let v: Vec<f64> = self.means.iter().filter_map(|(_, m)| *m).collect();
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    pub fn to_csv(&self, key: &str) -> String {
        let mut s = format!("{key},seed,auc,note\n");
        for r in &self.rows {
            let auc = r.auc.map(|a| a.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{auc},{}\n", r.label, r.seed, r.note.replace(',', ";")));
        }
        s
    }

    fn emit(&self, dir: &Path, stem: &str, key: &str, title: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| AheadError::io(dir, e))?;
        write_text(&dir.join(format!("{stem}.csv")), &self.to_csv(key))?;
        let xs: Vec<String> = self.means.iter().map(|(l, _)| l.clone()).collect();
        let ys: Vec<Option<f64>> = self.means.iter().map(|(_, m)| *m).collect();
        let svg = if stem == "ablation" {
            let bars: Vec<(String, f64)> = self.means.iter().filter_map(|(l, m)| m.map(|m| (l.clone(), m))).collect();
            plot::bar_chart(title, "mean AUC", &bars)
        } else {
            plot::line_chart(title, key, "mean AUC", &xs, &[("mean AUC".into(), ys)])
        };
        plot::write_chart(&dir.join(format!("{stem}.svg")), &svg);
        Ok(())
    }
}

fn run_one(g: &HetGraph, cfg: &PipelineConfig) -> Result<f64> {
    Ok(run_pipeline(g, cfg, None)?.metrics.auc)
}

/// Trains the full model and the three single-decoder ablations for every
/// seed. A dropped decoder loses both its loss and its score term.
pub fn run_ablation(g: &HetGraph, base: &PipelineConfig, seeds: &[u64], out: Option<&Path>) -> Result<GridSummary> {
    if seeds.is_empty() {
        return Err(AheadError::Config("at least one seed required".into()));
    }
    let mut rows = Vec::new();
    for v in Variant::ALL {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.model.decoders = v.decoders();
            cfg.train.seed = seed;
            rows.push(RunRow {
                label: v.name().into(),
                seed,
                auc: Some(run_one(g, &cfg)?),
                note: String::new(),
            });
        }
    }
    let order: Vec<String> = Variant::ALL.iter().map(|v| v.name().to_string()).collect();
    let summary = GridSummary::from_rows(&order, rows);
    if let Some(dir) = out {
        summary.emit(dir, "ablation", "variant", "Decoder ablation")?;
    }
    Ok(summary)
}

// Sweeps.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepGrid {
    Lambda(Vec<(f64, f64)>),
    Depth(Vec<usize>),
    Lr(Vec<f64>),
}

impl SweepGrid {
    pub fn kind(&self) -> &'static str {
        match self {
            SweepGrid::Lambda(_) => "lambda",
            SweepGrid::Depth(_) => "depth",
            SweepGrid::Lr(_) => "lr",
        }
    }

    fn len(&self) -> usize {
        match self {
            SweepGrid::Lambda(v) => v.len(),
            SweepGrid::Depth(v) => v.len(),
            SweepGrid::Lr(v) => v.len(),
        }
    }

    fn labels(&self) -> Vec<String> {
        match self {
            SweepGrid::Lambda(v) => v.iter().map(|(a, b)| format!("{a}/{b}")).collect(),
            SweepGrid::Depth(v) => v.iter().map(|d| d.to_string()).collect(),
            SweepGrid::Lr(v) => v.iter().map(|x| format!("{x:e}")).collect(),
        }
    }
}

/// One pipeline run per feasible grid point and seed. Infeasible points get a
/// row with no AUC and the reason. For the λ grid the model does not depend
/// on λ, so each seed is trained once and re-scored per point.
pub fn run_sweep(g: &HetGraph, base: &PipelineConfig, grid: &SweepGrid, seeds: &[u64], out: Option<&Path>) -> Result<GridSummary> {
    if seeds.is_empty() || grid.len() == 0 {
        return Err(AheadError::Config("sweep needs a non-empty grid and at least one seed".into()));
    }
    let labels = grid.labels();
    let mut rows = Vec::new();
    let skip = |label: &str, seed, note: String| RunRow {
        label: label.into(),
        seed,
        auc: None,
        note,
    };
    match grid {
        SweepGrid::Lambda(points) => {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.train.seed = seed;
                let trained = run_pipeline(g, &cfg, None)?;
                let flags: Vec<bool> = flat_labels(g).iter().map(|l| l.is_anomaly).collect();
                let part = ViewPartition::of(g);
                let fwd = train::forward_loss(g, &part, &trained.params, &cfg.model)?;
                for (label, &(l1, l2)) in labels.iter().zip(points) {
                    let w = ScoreWeights { lambda1: l1, lambda2: l2 };
                    match decode::score_report(g, &fwd.reconstruction, w, cfg.model.decoders) {
                        Ok(rep) => rows.push(RunRow {
                            label: label.clone(),
                            seed,
                            auc: Some(metrics::auc(&rep.scores(), &flags)?),
                            note: String::new(),
                        }),
                        Err(e @ AheadError::Config(_)) => rows.push(skip(label, seed, format!("skipped: {e}"))),
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        SweepGrid::Depth(points) => {
            for (label, &d) in labels.iter().zip(points) {
                for &seed in seeds {
                    if d == 0 {
                        rows.push(skip(label, seed, "skipped: depth must be at least 1".into()));
                        continue;
                    }
                    let mut cfg = base.clone();
                    cfg.model.encoder.depth = d;
                    cfg.train.seed = seed;
                    rows.push(RunRow {
                        label: label.clone(),
                        seed,
                        auc: Some(run_one(g, &cfg)?),
                        note: String::new(),
                    });
                }
            }
        }
        SweepGrid::Lr(points) => {
            for (label, &lr) in labels.iter().zip(points) {
                for &seed in seeds {
                    if !(lr > 0.0 && lr.is_finite()) {
                        rows.push(skip(label, seed, "skipped: learning rate must be positive".into()));
                        continue;
                    }
                    let mut cfg = base.clone();
                    cfg.train.learning_rate = lr;
                    cfg.train.seed = seed;
                    match run_one(g, &cfg) {
                        Ok(auc) => rows.push(RunRow {
                            label: label.clone(),
                            seed,
                            auc: Some(auc),
                            note: String::new(),
                        }),
                        // Very large rates may diverge; that is a result, not a failure.
                        Err(e) if e.exit_code() == 3 => rows.push(skip(label, seed, format!("diverged: {e}"))),
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    for r in rows.iter().filter(|r| r.auc.is_none()) {
        eprintln!("warning: {} {} seed {}: {}", grid.kind(), r.label, r.seed, r.note);
    }
    let summary = GridSummary::from_rows(&labels, rows);
    if let Some(dir) = out {
        let title = format!("{} sweep", grid.kind());
        summary.emit(dir, &format!("sweep_{}", grid.kind()), grid.kind(), &title)?;
    }
    Ok(summary)
}

// Robustness.

/// Injects `base` scaled by each factor into the clean graph and runs the
/// pipeline, per seed. The injection seed follows the run seed.
pub fn run_robustness(
    clean: &HetGraph,
    base: &InjectionConfig,
    factors: &[usize],
    cfg: &PipelineConfig,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<GridSummary> {
    if seeds.is_empty() || factors.is_empty() {
        return Err(AheadError::Config("robustness needs factors and seeds".into()));
    }
    let labels: Vec<String> = factors.iter().map(|f| format!("x{f}")).collect();
    let mut rows = Vec::new();
    for (label, &f) in labels.iter().zip(factors) {
        for &seed in seeds {
            let mut inj = base.scaled(f);
            inj.seed = seed;
            let (g, report) = inject::inject(clean, &inj).map_err(|e| e.in_stage("inject"))?;
            let mut c = cfg.clone();
            c.train.seed = seed;
            rows.push(RunRow {
                label: label.clone(),
                seed,
                auc: Some(run_one(&g, &c)?),
                note: format!(
                    "{} attribute, {} structural",
                    report.attribute.len(),
                    report.num_structural()
                ),
            });
        }
    }
    let summary = GridSummary::from_rows(&labels, rows);
    if let Some(dir) = out {
        summary.emit(dir, "robustness", "scale", "AUC vs injected anomaly count")?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::tiny_fixture;

    fn labeled_fixture() -> (HetGraph, PipelineConfig) {
        let (g, model) = tiny_fixture(0);
        let inj = InjectionConfig {
            attr_n: [("paper".to_string(), 1), ("author".to_string(), 1)].into_iter().collect(),
            attr_k: 2,
            struct_m: 2,
            struct_c: 1,
            struct_relation: Some("writes".into()),
            seed: 1,
        };
        let (g, _) = inject::inject(&g, &inj).unwrap();
        let cfg = PipelineConfig {
            model,
            train: TrainConfig {
                max_epochs: 3,
                ..Default::default()
            },
            weights: ScoreWeights::default(),
        };
        (g, cfg)
    }

    #[test]
    fn pipeline_writes_artifacts_deterministically() {
        let (g, cfg) = labeled_fixture();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run_pipeline(&g, &cfg, Some(d1.path())).unwrap();
        let b = run_pipeline(&g, &cfg, Some(d2.path())).unwrap();
        assert_eq!(a.metrics.auc, b.metrics.auc);
        for f in ["scores.csv", "model.bin", "loss.csv"] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d1.path().join("metrics.json")).unwrap()).unwrap();
        for key in ["auc", "auc_by_kind", "n_anomalies", "n_nodes", "seed", "config", "wall_seconds"] {
            assert!(m.get(key).is_some(), "{key}");
        }
        assert_eq!(m["n_anomalies"]["total"], 4);
    }

    #[test]
    fn zero_anomalies_fail_at_eval() {
        let (g, mut cfg) = labeled_fixture();
        let mut g = g;
        g.labels = Some(g.labels_or_normal().into_iter().map(|v| vec![NodeLabel::NORMAL; v.len()]).collect());
        cfg.train.max_epochs = 1;
        let e = run_pipeline(&g, &cfg, None).unwrap_err();
        let msg = e.to_string();
        assert!(msg.starts_with("eval:") && msg.contains("both classes"), "{msg}");
    }

    #[test]
    fn ablation_runs_every_variant() {
        let (g, mut cfg) = labeled_fixture();
        cfg.train.max_epochs = 1;
        let d = tempfile::tempdir().unwrap();
        let s = run_ablation(&g, &cfg, &[0, 1], Some(d.path())).unwrap();
        assert_eq!(s.rows.len(), 8);
        assert_eq!(s.means.len(), 4);
        assert!(d.path().join("ablation.csv").exists() && d.path().join("ablation.svg").exists());
    }

    #[test]
    fn infeasible_sweep_points_are_skipped() {
        let (g, mut cfg) = labeled_fixture();
        cfg.train.max_epochs = 1;
        let s = run_sweep(&g, &cfg, &SweepGrid::Lambda(vec![(0.4, 0.4), (0.6, 0.6)]), &[0], None).unwrap();
        assert!(s.rows[0].auc.is_some());
        assert!(s.rows[1].auc.is_none() && s.rows[1].note.starts_with("skipped"));
        assert_eq!(s.mean_of("0.6/0.6"), None);
        let s = run_sweep(&g, &cfg, &SweepGrid::Depth(vec![1, 2, 4]), &[0, 1], None).unwrap();
        assert_eq!(s.rows.len(), 6);
        assert!(s.rows.iter().all(|r| r.auc.is_some()));
    }

    #[test]
    fn random_control_is_deterministic() {
        let (g, _) = labeled_fixture();
        assert_eq!(random_control_auc(&g, 3).unwrap(), random_control_auc(&g, 3).unwrap());
    }
}
