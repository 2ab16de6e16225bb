//! Command-line front end: data generation, injection, training, scoring,
//! evaluation and the experiment grids.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ahead::decode::{self, LossNorm, ScoreWeights};
use ahead::encoder::AttnScale;
use ahead::experiment::{self, PipelineConfig, SweepGrid};
use ahead::hetgraph::{self, HetGraph};
use ahead::inject::{self, InjectionConfig};
use ahead::preprocess::{self, ViewPartition};
use ahead::synth::{self, SynthConfig};
use ahead::train::{self, ModelConfig, TrainConfig};
use ahead::{plot, AheadError, Result};

const GRAD_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "ahead", version, about = "Heterogeneity-aware graph anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic block-model bundle.
    Generate {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// JSON generator configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-partition attribute columns into random views.
    SplitViews {
        #[arg(long = "in")]
        input: PathBuf,
        /// TYPE=K pairs, comma separated.
        #[arg(long)]
        views: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        standardize: bool,
        /// Output bundle; defaults to rewriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inject attribute and structural anomalies.
    Inject {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        inj: InjectArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and save it.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hp: HyperArgs,
    },
    /// Score every node with a saved model.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
    },
    /// Compute AUC of a scores file against a labels file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional SVG bar chart of the AUCs.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Train the full model and each single-decoder-removed variant.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        #[command(flatten)]
        hp: HyperArgs,
        #[command(flatten)]
        weights: WeightArgs,
    },
    /// Sweep λ pairs, depth or learning rate.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Comma-separated points; λ pairs are written `L1/L2`.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[command(flatten)]
        hp: HyperArgs,
        #[command(flatten)]
        weights: WeightArgs,
    },
    /// Inject scaled anomaly counts into a clean bundle and compare AUCs.
    Robust {
        /// Bundle without injected anomalies.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        inj: InjectArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
        factors: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[command(flatten)]
        hp: HyperArgs,
        #[command(flatten)]
        weights: WeightArgs,
    },
    /// Compare analytic and finite-difference gradients on a tiny graph.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

#[derive(Args)]
struct InjectArgs {
    /// TYPE=N pairs, comma separated.
    #[arg(long, default_value = "")]
    attr_n: String,
    #[arg(long, default_value_t = 50)]
    attr_k: usize,
    #[arg(long, default_value_t = 15)]
    struct_m: usize,
    #[arg(long, default_value_t = 0)]
    struct_c: usize,
    #[arg(long)]
    struct_relation: Option<String>,
}

impl InjectArgs {
    fn config(&self, seed: u64) -> Result<InjectionConfig> {
        Ok(InjectionConfig {
            attr_n: parse_pairs(&self.attr_n, "--attr-n")?,
            attr_k: self.attr_k,
            struct_m: self.struct_m,
            struct_c: self.struct_c,
            struct_relation: self.struct_relation.clone(),
            seed,
        })
    }
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 16)]
    outdim: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = LossArg::Frobenius)]
    loss: LossArg,
    #[arg(long, value_enum, default_value_t = ScaleArg::Overall)]
    attn_scale: ScaleArg,
}

impl HyperArgs {
    fn configs(&self) -> (ModelConfig, TrainConfig) {
        let mut model = ModelConfig::default();
        model.encoder.hidden_dim = self.hidden;
        model.encoder.out_dim = self.outdim;
        model.encoder.heads = self.heads;
        model.encoder.depth = self.depth;
        model.encoder.attn_scale = match self.attn_scale {
            ScaleArg::Overall => AttnScale::Overall,
            ScaleArg::PerHead => AttnScale::PerHead,
        };
        model.loss = match self.loss {
            LossArg::Frobenius => LossNorm::Frobenius,
            LossArg::Squared => LossNorm::Squared,
        };
        let train = TrainConfig {
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            max_epochs: self.epochs,
            seed: self.seed,
            ..TrainConfig::default()
        };
        (model, train)
    }

    fn pipeline(&self, weights: &WeightArgs) -> PipelineConfig {
        let (model, train) = self.configs();
        PipelineConfig {
            model,
            train,
            weights: weights.weights(),
        }
    }
}

#[derive(Args)]
struct WeightArgs {
    #[arg(long, default_value_t = 0.4)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.4)]
    lambda2: f64,
}

impl WeightArgs {
    fn weights(&self) -> ScoreWeights {
        ScoreWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Frobenius,
    Squared,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Overall,
    PerHead,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Lambda,
    Depth,
    Lr,
}

fn parse_pairs(s: &str, flag: &str) -> Result<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, n) = part
            .split_once('=')
            .ok_or_else(|| AheadError::Config(format!("{flag}: expected TYPE=N, got '{part}'")))?;
        let n = n
            .trim()
            .parse()
            .map_err(|_| AheadError::Config(format!("{flag}: invalid count in '{part}'")))?;
        out.insert(name.trim().to_string(), n);
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| AheadError::Config(format!("invalid {what} '{p}'")))
        })
        .collect()
}

fn parse_grid(kind: SweepKind, s: &str) -> Result<SweepGrid> {
    Ok(match kind {
        SweepKind::Depth => SweepGrid::Depth(parse_list(s, "depth")?),
        SweepKind::Lr => SweepGrid::Lr(parse_list(s, "learning rate")?),
        SweepKind::Lambda => {
            let mut pts = Vec::new();
            for p in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let pair = p.split_once('/').and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
                pts.push(pair.ok_or_else(|| AheadError::Config(format!("invalid λ pair '{p}', expected L1/L2")))?);
            }
            SweepGrid::Lambda(pts)
        }
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| AheadError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AheadError::io(dir, e))
}

fn load_labeled(dir: &Path) -> Result<HetGraph> {
    let g = hetgraph::load_bundle(dir)?;
    if g.labels.is_none() {
        return Err(AheadError::Config(format!("{} has no labels.csv", dir.display())));
    }
    Ok(g)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            preset,
            config,
            out,
            seed,
        } => {
            let mut cfg: SynthConfig = match (preset, config) {
                (Some(name), _) => synth::preset(&name)?,
                (None, Some(path)) => {
                    let text = fs::read_to_string(&path).map_err(|e| AheadError::io(&path, e))?;
                    serde_json::from_str(&text)
                        .map_err(|e| AheadError::Config(format!("{}: {e}", path.display())))?
                }
                (None, None) => unreachable!("clap requires one of --preset / --config"),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let g = synth::generate(&cfg)?;
            hetgraph::save_bundle(&g, &out)?;
            println!("wrote {} nodes to {}", g.total_nodes(), out.display());
        }
        Command::SplitViews {
            input,
            views,
            seed,
            standardize,
            out,
        } => {
            let mut g = hetgraph::load_bundle(&input)?;
            if standardize {
                g = preprocess::standardize(&g);
            }
            let part = preprocess::split_views(&g, &parse_pairs(&views, "--views")?, seed)?;
            let g = part.apply(&g)?;
            let out = out.unwrap_or(input);
            hetgraph::save_bundle(&g, &out)?;
            for t in &g.node_types {
                println!("{}: views {:?}", t.name, t.view_dims);
            }
        }
        Command::Inject { input, out, inj, seed } => {
            let g = hetgraph::load_bundle(&input)?;
            let cfg = inj.config(seed)?;
            let (g, report) = inject::inject(&g, &cfg)?;
            hetgraph::save_bundle(&g, &out)?;
            write_json(&out.join("injection.json"), &report)?;
            println!(
                "{} attribute and {} structural anomalies written to {}",
                report.attribute.len(),
                report.num_structural(),
                out.display()
            );
        }
        Command::Train { data, out, hp } => {
            let g = hetgraph::load_bundle(&data)?;
            let (model, train) = hp.configs();
            let part = ViewPartition::of(&g);
            let outcome = train::train_model(&g, &part, &model, &train)?;
            train::save_model(&out, &g, &model, &train, &outcome.params)?;
            let trace = outcome.total_trace();
            if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
                println!("loss {first:.6} -> {last:.6} over {} epochs", trace.len());
            }
        }
        Command::Score {
            data,
            model,
            out,
            weights,
        } => {
            let g = hetgraph::load_bundle(&data)?;
            let (saved, params) = train::load_model(&model, &g)?;
            let report = experiment::score_model(&g, &params, &saved.model, weights.weights())?;
            decode::write_scores_csv(&report, &out)?;
            println!("scored {} nodes", report.rows.len());
        }
        Command::Eval {
            scores,
            labels,
            out,
            plot: chart,
        } => {
            let m = experiment::evaluate_files(&scores, &labels)?;
            m.write_json(&out)?;
            println!("AUC {:.4}", m.auc);
            if let Some(path) = chart {
                let mut bars = vec![("all".to_string(), m.auc)];
                bars.extend(m.auc_by_kind.iter().map(|(k, v)| (k.clone(), *v)));
                plot::write_chart(&path, &plot::bar_chart("AUC", "AUC", &bars));
            }
        }
        Command::Ablate {
            data,
            out,
            seeds,
            hp,
            weights,
        } => {
            let g = load_labeled(&data)?;
            create_dir(&out)?;
            let summary = experiment::run_ablation(&g, &hp.pipeline(&weights), &seeds, Some(&out))?;
            print_means(&summary);
        }
        Command::Sweep {
            data,
            kind,
            grid,
            out,
            seeds,
            hp,
            weights,
        } => {
            let g = load_labeled(&data)?;
            let grid = parse_grid(kind, &grid)?;
            create_dir(&out)?;
            let summary = experiment::run_sweep(&g, &hp.pipeline(&weights), &grid, &seeds, Some(&out))?;
            print_means(&summary);
        }
        Command::Robust {
            data,
            out,
            inj,
            factors,
            seeds,
            hp,
            weights,
        } => {
            let g = hetgraph::load_bundle(&data)?;
            let base = inj.config(0)?;
            create_dir(&out)?;
            let summary =
                experiment::run_robustness(&g, &base, &factors, &hp.pipeline(&weights), &seeds, Some(&out))?;
            print_means(&summary);
            println!("spread {:.4}", summary.spread());
        }
        Command::Gradcheck { seed, samples } => {
            let (g, model) = train::tiny_fixture(seed);
            let part = ViewPartition::of(&g);
            let params = train::init_params(&g, &part, &model, seed)?;
            let report = train::grad_check(&g, &part, &params, &model, samples, seed)?;
            println!(
                "max relative error {:.3e} over {} samples",
                report.max_rel_error,
                report.samples.len()
            );
            if report.max_rel_error.is_nan() || report.max_rel_error > GRAD_TOL {
                return Err(AheadError::Numerical(format!(
                    "gradient check failed: {:.3e} > {GRAD_TOL:e}",
                    report.max_rel_error
                )));
            }
        }
    }
    Ok(())
}

fn print_means(summary: &experiment::GridSummary) {
    for (label, m) in &summary.means {
        match m {
            Some(v) => println!("{label}: mean AUC {v:.4}"),
            None => println!("{label}: no completed runs"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
