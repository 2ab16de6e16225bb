//! C interface to the `ahead` detector.
//!
//! Every fallible function returns an [`AheadStatus`] and writes results
//! through out-pointers. On failure, [`ahead_last_error`] describes the most
//! recent error on the calling thread. Handles are opaque and must be
//! released with the matching `*_free` function; passing NULL to a free
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ahead::decode::{self, ScoreReport, ScoreWeights};
use ahead::experiment::{self, PipelineConfig};
use ahead::inject::{self, InjectionConfig};
use ahead::params::ModelParams;
use ahead::preprocess::ViewPartition;
use ahead::train::{self, ModelConfig, TrainConfig};
use ahead::{hetgraph, metrics, synth, AheadError, HetGraph};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AheadStatus {
    Ok = 0,
    /// Invalid argument or configuration.
    Usage = 1,
    /// Unreadable, malformed or inconsistent data.
    Data = 2,
    /// Non-finite values or diverging training.
    Numerical = 3,
    /// A required pointer was NULL.
    NullPointer = 4,
    /// An internal panic was caught at the boundary.
    Internal = 5,
}

/// A heterogeneous graph, optionally carrying anomaly labels.
pub struct AheadGraph {
    graph: HetGraph,
}

/// Trained parameters together with the configuration that produced them.
pub struct AheadModel {
    model: ModelConfig,
    train: TrainConfig,
    params: ModelParams,
    loss_trace: Vec<f64>,
}

/// Per-node anomaly scores in global node order.
pub struct AheadScores {
    report: ScoreReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &AheadError) -> AheadStatus {
    match e.exit_code() {
        1 => AheadStatus::Usage,
        3 => AheadStatus::Numerical,
        _ => AheadStatus::Data,
    }
}

enum Failure {
    Null(&'static str),
    Usage(String),
    Core(AheadError),
}

impl From<AheadError> for Failure {
    fn from(e: AheadError) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AheadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AheadStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("{what} is NULL"));
            AheadStatus::NullPointer
        }
        Ok(Err(Failure::Usage(msg))) => {
            set_error(&msg);
            AheadStatus::Usage
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal error (panic caught at the C boundary)");
            AheadStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Usage(format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

fn out_arg<T>(p: *mut *mut T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::Usage(format!("{what}: {e}")))
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn ahead_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ahead_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// Graphs.

/// Loads a graph bundle directory (with `labels.csv` when present).
///
/// # Safety
/// `dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ahead_graph_load(dir: *const c_char, out: *mut *mut AheadGraph) -> AheadStatus {
    guard(|| {
        out_arg(out, "out")?;
        let dir = str_arg(dir, "dir")?;
        let graph = hetgraph::load_bundle(PathBuf::from(dir))?;
        *out = Box::into_raw(Box::new(AheadGraph { graph }));
        Ok(())
    })
}

/// Generates a synthetic graph from a named preset such as `coaid-mini`.
///
/// # Safety
/// `preset` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ahead_graph_generate(
    preset: *const c_char,
    seed: u64,
    out: *mut *mut AheadGraph,
) -> AheadStatus {
    guard(|| {
        out_arg(out, "out")?;
        let mut cfg = synth::preset(str_arg(preset, "preset")?)?;
        cfg.seed = seed;
        let graph = synth::generate(&cfg)?;
        *out = Box::into_raw(Box::new(AheadGraph { graph }));
        Ok(())
    })
}

/// Injects anomalies described by a JSON object with the fields `attr_n`
/// (type → count), `attr_k`, `struct_m`, `struct_c`, `struct_relation` and
/// `seed`. The input graph is left unchanged.
///
/// # Safety
/// `graph` must be a live handle; `config_json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ahead_graph_inject(
    graph: *const AheadGraph,
    config_json: *const c_char,
    out: *mut *mut AheadGraph,
) -> AheadStatus {
    guard(|| {
        out_arg(out, "out")?;
        let g = ref_arg(graph, "graph")?;
        let cfg: InjectionConfig = parse_json(str_arg(config_json, "config_json")?, "injection config")?;
        let (graph, _) = inject::inject(&g.graph, &cfg)?;
        *out = Box::into_raw(Box::new(AheadGraph { graph }));
        Ok(())
    })
}

/// Writes the graph as a bundle directory.
///
/// # Safety
/// `graph` must be a live handle; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ahead_graph_save(graph: *const AheadGraph, dir: *const c_char) -> AheadStatus {
    guard(|| {
        let g = ref_arg(graph, "graph")?;
        hetgraph::save_bundle(&g.graph, PathBuf::from(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// Total node count over all types; 0 for NULL.
///
/// # Safety
/// `graph` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ahead_graph_num_nodes(graph: *const AheadGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.total_nodes())
}

/// Releases a graph.
///
/// # Safety
/// `graph` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ahead_graph_free(graph: *mut AheadGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

// Models.

/// Trains a model. `config_json` may be NULL for the defaults, or a JSON
/// object with optional `model` and `train` sections.
///
/// # Safety
/// `graph` must be a live handle; `config_json` NULL or NUL-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ahead_model_train(
    graph: *const AheadGraph,
    config_json: *const c_char,
    out: *mut *mut AheadModel,
) -> AheadStatus {
    guard(|| {
        out_arg(out, "out")?;
        let g = ref_arg(graph, "graph")?;
        let cfg: PipelineConfig = match opt_str_arg(config_json, "config_json")? {
            Some(text) => parse_json(text, "training config")?,
            None => PipelineConfig::default(),
        };
        let part = ViewPartition::of(&g.graph);
        let outcome = train::train_model(&g.graph, &part, &cfg.model, &cfg.train)?;
        let loss_trace = outcome.total_trace();
        *out = Box::into_raw(Box::new(AheadModel {
            model: cfg.model,
            train: cfg.train,
            params: outcome.params,
            loss_trace,
        }));
        Ok(())
    })
}

/// Loads a model file; fails if it was trained on a different schema.
///
/// # Safety
/// `path` must be NUL-terminated; `graph` a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ahead_model_load(
    path: *const c_char,
    graph: *const AheadGraph,
    out: *mut *mut AheadModel,
) -> AheadStatus {
    guard(|| {
        out_arg(out, "out")?;
        let g = ref_arg(graph, "graph")?;
        let (cfg, params) = train::load_model(PathBuf::from(str_arg(path, "path")?), &g.graph)?;
        *out = Box::into_raw(Box::new(AheadModel {
            model: cfg.model,
            train: cfg.train,
            params,
            loss_trace: Vec::new(),
        }));
        Ok(())
    })
}

/// Saves a model file tied to the schema of `graph`.
///
/// # Safety
/// `model` and `graph` must be live handles; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ahead_model_save(
    model: *const AheadModel,
    graph: *const AheadGraph,
    path: *const c_char,
) -> AheadStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let g = ref_arg(graph, "graph")?;
        train::save_model(PathBuf::from(str_arg(path, "path")?), &g.graph, &m.model, &m.train, &m.params)?;
        Ok(())
    })
}

/// Number of recorded epochs; 0 for a loaded model or NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ahead_model_num_epochs(model: *const AheadModel) -> usize {
    model.as_ref().map_or(0, |m| m.loss_trace.len())
}

/// Copies the per-epoch total loss into `buf` (at most `len` values) and
/// stores the number copied in `written`.
///
/// # Safety
/// `model` must be a live handle; `buf` must hold `len` doubles; `written`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ahead_model_loss_trace(
    model: *const AheadModel,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> AheadStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if written.is_null() {
            return Err(Failure::Null("written"));
        }
        let n = len.min(m.loss_trace.len());
        if n > 0 {
            if buf.is_null() {
                return Err(Failure::Null("buf"));
            }
            ptr::copy_nonoverlapping(m.loss_trace.as_ptr(), buf, n);
        }
        *written = n;
        Ok(())
    })
}

/// Releases a model.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ahead_model_free(model: *mut AheadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// Scores.

/// Scores every node of `graph` with weights `lambda1` (structure) and
/// `lambda2` (attributes); the node-type term gets the remainder.
///
/// # Safety
/// `model` and `graph` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ahead_score(
    model: *const AheadModel,
    graph: *const AheadGraph,
    lambda1: f64,
    lambda2: f64,
    out: *mut *mut AheadScores,
) -> AheadStatus {
    guard(|| {
        out_arg(out, "out")?;
        let m = ref_arg(model, "model")?;
        let g = ref_arg(graph, "graph")?;
        let weights = ScoreWeights { lambda1, lambda2 };
        let report = experiment::score_model(&g.graph, &m.params, &m.model, weights)?;
        *out = Box::into_raw(Box::new(AheadScores { report }));
        Ok(())
    })
}

/// Number of scored nodes; 0 for NULL.
///
/// # Safety
/// `scores` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ahead_scores_len(scores: *const AheadScores) -> usize {
    scores.as_ref().map_or(0, |s| s.report.rows.len())
}

/// Copies scores in global node order into `buf`, which must hold exactly
/// [`ahead_scores_len`] values.
///
/// # Safety
/// `scores` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ahead_scores_copy(scores: *const AheadScores, buf: *mut f64, len: usize) -> AheadStatus {
    guard(|| {
        let s = ref_arg(scores, "scores")?;
        let values = s.report.scores();
        if len != values.len() {
            return Err(Failure::Usage(format!("buffer holds {len} values, {} needed", values.len())));
        }
        if len > 0 {
            if buf.is_null() {
                return Err(Failure::Null("buf"));
            }
            ptr::copy_nonoverlapping(values.as_ptr(), buf, len);
        }
        Ok(())
    })
}

/// AUC of the scores against the labels carried by `graph`.
///
/// # Safety
/// `scores` and `graph` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ahead_scores_auc(
    scores: *const AheadScores,
    graph: *const AheadGraph,
    out: *mut f64,
) -> AheadStatus {
    guard(|| {
        let s = ref_arg(scores, "scores")?;
        let g = ref_arg(graph, "graph")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if g.graph.labels.is_none() {
            return Err(Failure::Usage("graph carries no labels".into()));
        }
        let flags: Vec<bool> = experiment::flat_labels(&g.graph).iter().map(|l| l.is_anomaly).collect();
        *out = metrics::auc(&s.report.scores(), &flags)?;
        Ok(())
    })
}

/// Writes the scores file (type, index, score, probability, rank, residuals).
///
/// # Safety
/// `scores` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ahead_scores_write_csv(scores: *const AheadScores, path: *const c_char) -> AheadStatus {
    guard(|| {
        let s = ref_arg(scores, "scores")?;
        decode::write_scores_csv(&s.report, PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Releases scores.
///
/// # Safety
/// `scores` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ahead_scores_free(scores: *mut AheadScores) {
    if !scores.is_null() {
        drop(Box::from_raw(scores));
    }
}
