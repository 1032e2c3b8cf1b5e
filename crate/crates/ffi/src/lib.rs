//! C ABI over the graph store, the sampler and the train/eval drivers.
//!
//! Every fallible function returns an [`HgtStatus`]; on failure the message
//! is available from [`hgt_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Strings returned
//! through out-pointers are owned by the caller and released with
//! [`hgt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hgt_core::cli::{self, EvalArgs, Split, TrainArgs};
use hgt_core::hetgraph::{self, BuildOptions, HeteroGraph, NodeRef, NodeTypeId};
use hgt_core::hgt::{Hgt, HgtConfig};
use hgt_core::sampler::{hg_sample, SampledSubgraph, SamplerConfig, Seed};
use hgt_core::Error;

/// Result of a call. The error classes match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgtStatus {
    Ok = 0,
    /// Invalid configuration or arguments.
    ConfigError = 2,
    /// Malformed or inconsistent data.
    DataError = 3,
    /// Non-finite loss or a missing gradient.
    NumericError = 4,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 5,
    /// The library panicked; the handle involved should not be reused.
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgtSplit {
    Validation = 0,
    Test = 1,
}

/// One sampling seed. `time` is read only when `has_time` is true; plain
/// node types require it.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HgtSeed {
    pub node_type: usize,
    pub id: usize,
    pub time: i64,
    pub has_time: bool,
}

/// Ranking metrics of an evaluation. `accuracy` is NaN for the link task.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HgtMetrics {
    pub n_queries: usize,
    pub loss: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub accuracy: f64,
}

/// A loaded heterogeneous graph.
pub struct HgtGraph {
    graph: HeteroGraph,
    type_names: Vec<CString>,
}

/// A sampled subgraph. It stays valid after its graph is freed.
pub struct HgtSubgraph {
    sg: SampledSubgraph,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HgtStatus {
    match e.exit_code() {
        2 => HgtStatus::ConfigError,
        4 => HgtStatus::NumericError,
        _ => HgtStatus::DataError,
    }
}

struct Invalid(&'static str);

enum Failure {
    Core(Error),
    Arg(Invalid),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<Invalid> for Failure {
    fn from(e: Invalid) -> Self {
        Failure::Arg(e)
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HgtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HgtStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Ok(Err(Failure::Arg(Invalid(msg)))) => {
            set_error(msg.to_string());
            HgtStatus::InvalidArgument
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            HgtStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Invalid> {
    if p.is_null() {
        return Err(Invalid(what));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| Invalid(what))
}

unsafe fn opt_path_arg(p: *const c_char, what: &'static str) -> Result<Option<PathBuf>, Invalid> {
    if p.is_null() {
        Ok(None)
    } else {
        path_arg(p, what).map(Some)
    }
}

fn out_string(s: String, out: *mut *mut c_char) {
    let c = CString::new(s).unwrap_or_default();
    unsafe { *out = c.into_raw() };
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; empty if nothing has failed.
#[no_mangle]
pub extern "C" fn hgt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hgt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hgt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens a graph directory (raw TSV files or an ingested bundle).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hgt_graph_open(dir: *const c_char, self_loops: bool, out: *mut *mut HgtGraph) -> HgtStatus {
    guard(|| {
        if out.is_null() {
            return Err(Invalid("out is null").into());
        }
        let dir = path_arg(dir, "dir must be a UTF-8 path")?;
        if !dir.exists() {
            return Err(Error::Config(format!("graph directory {} does not exist", dir.display())).into());
        }
        let graph = hetgraph::open(&dir, BuildOptions { self_loops })?;
        let s = graph.schema();
        let type_names = (0..s.num_node_types())
            .map(|t| CString::new(s.node_name(NodeTypeId(t))).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(HgtGraph { graph, type_names }));
        Ok(())
    })
}

/// # Safety
/// `g` must come from [`hgt_graph_open`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hgt_graph_free(g: *mut HgtGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of node types, or 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn hgt_graph_num_node_types(g: *const HgtGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.schema().num_node_types())
}

/// Number of edge types including generated reverses, or 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn hgt_graph_num_edge_types(g: *const HgtGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.schema().num_edge_types())
}

/// Name of node type `ty`, owned by the handle; null when out of range.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn hgt_graph_node_type_name(g: *const HgtGraph, ty: usize) -> *const c_char {
    g.as_ref()
        .and_then(|g| g.type_names.get(ty))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Node count of type `ty`, or 0 when the handle is null or `ty` is out of range.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn hgt_graph_num_nodes(g: *const HgtGraph, ty: usize) -> usize {
    g.as_ref()
        .filter(|g| ty < g.graph.schema().num_node_types())
        .map_or(0, |g| g.graph.num_nodes(NodeTypeId(ty)))
}

/// Total edge count over all edge types.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn hgt_graph_num_edges(g: *const HgtGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.total_edges())
}

/// Trainable parameter count of a model over the graph's schema.
///
/// # Safety
/// `g` must be a live graph handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hgt_param_count(
    g: *const HgtGraph,
    hidden: usize,
    heads: usize,
    layers: usize,
    use_heter: bool,
    use_rte: bool,
    out: *mut u64,
) -> HgtStatus {
    guard(|| {
        let g = g.as_ref().ok_or(Invalid("graph is null"))?;
        if out.is_null() {
            return Err(Invalid("out is null").into());
        }
        let cfg = HgtConfig {
            hidden,
            heads,
            layers,
            use_heter,
            use_rte,
            ..HgtConfig::default()
        };
        let model = Hgt::new(g.graph.schema(), cfg)?;
        *out = model.param_count().total as u64;
        Ok(())
    })
}

/// Samples a subgraph around `seeds` with `n` draws per type for `depth` rounds.
///
/// # Safety
/// `g` must be a live graph handle, `seeds` must point to `n_seeds` values
/// and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hgt_sample(
    g: *const HgtGraph,
    seeds: *const HgtSeed,
    n_seeds: usize,
    n: usize,
    depth: usize,
    rng_seed: u64,
    out: *mut *mut HgtSubgraph,
) -> HgtStatus {
    guard(|| {
        let g = g.as_ref().ok_or(Invalid("graph is null"))?;
        if out.is_null() || (seeds.is_null() && n_seeds > 0) {
            return Err(Invalid("null pointer argument").into());
        }
        let raw = if n_seeds == 0 { &[][..] } else { std::slice::from_raw_parts(seeds, n_seeds) };
        let types = g.graph.schema().num_node_types();
        let mut list = Vec::with_capacity(raw.len());
        for s in raw {
            if s.node_type >= types {
                return Err(Error::Config(format!("seed node type {} out of range", s.node_type)).into());
            }
            list.push(Seed {
                node: NodeRef { ty: NodeTypeId(s.node_type), id: s.id },
                time: s.has_time.then_some(s.time),
            });
        }
        let cfg = SamplerConfig {
            n,
            depth,
            rng_seed,
            ..SamplerConfig::default()
        };
        let sg = hg_sample(&g.graph, &list, &[], &cfg, 0)?;
        let json = serde_json::to_string(&sg.to_file(&g.graph)).map_err(|e| Error::Data(e.to_string()))?;
        let json = CString::new(json).map_err(|e| Error::Data(e.to_string()))?;
        *out = Box::into_raw(Box::new(HgtSubgraph { sg, json }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from [`hgt_sample`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hgt_subgraph_free(s: *mut HgtSubgraph) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be null or a live subgraph handle.
#[no_mangle]
pub unsafe extern "C" fn hgt_subgraph_num_nodes(s: *const HgtSubgraph) -> usize {
    s.as_ref().map_or(0, |s| s.sg.num_nodes())
}

/// # Safety
/// `s` must be null or a live subgraph handle.
#[no_mangle]
pub unsafe extern "C" fn hgt_subgraph_num_edges(s: *const HgtSubgraph) -> usize {
    s.as_ref().map_or(0, |s| s.sg.num_edges())
}

/// Subgraph as JSON (the `sample` command's format without the stamp),
/// owned by the handle; null for a null handle.
///
/// # Safety
/// `s` must be null or a live subgraph handle.
#[no_mangle]
pub unsafe extern "C" fn hgt_subgraph_json(s: *const HgtSubgraph) -> *const c_char {
    s.as_ref().map_or(ptr::null(), |s| s.json.as_ptr())
}

/// Trains on `graph_dir` and writes the checkpoint to `out_dir`, as the
/// `train` command does. `config` may be null for defaults. When
/// `summary_json` is non-null it receives the run summary.
///
/// # Safety
/// String arguments must be NUL-terminated; `summary_json` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn hgt_train(
    graph_dir: *const c_char,
    config: *const c_char,
    out_dir: *const c_char,
    summary_json: *mut *mut c_char,
) -> HgtStatus {
    guard(|| {
        let args = TrainArgs {
            graph: Some(path_arg(graph_dir, "graph_dir must be a UTF-8 path")?),
            task: None,
            config: opt_path_arg(config, "config must be a UTF-8 path")?,
            out: Some(path_arg(out_dir, "out_dir must be a UTF-8 path")?),
            seed: None,
            epochs: None,
            workers: None,
            ablations: false,
            quiet: true,
        };
        let text = cli::cmd_train(&args)?;
        if !summary_json.is_null() {
            out_string(text, summary_json);
        }
        Ok(())
    })
}

/// Evaluates the checkpoint in `ckpt_dir` on one split of `graph_dir`.
///
/// # Safety
/// String arguments must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hgt_eval(
    ckpt_dir: *const c_char,
    graph_dir: *const c_char,
    split: HgtSplit,
    out: *mut HgtMetrics,
) -> HgtStatus {
    guard(|| {
        if out.is_null() {
            return Err(Invalid("out is null").into());
        }
        let args = EvalArgs {
            ckpt: path_arg(ckpt_dir, "ckpt_dir must be a UTF-8 path")?,
            graph: path_arg(graph_dir, "graph_dir must be a UTF-8 path")?,
            task: None,
            split: match split {
                HgtSplit::Validation => Split::Val,
                HgtSplit::Test => Split::Test,
            },
            out: None,
            workers: None,
        };
        let text = cli::cmd_eval(&args)?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
        let num = |k: &str| v[k].as_f64().unwrap_or(f64::NAN);
        *out = HgtMetrics {
            n_queries: v["n_queries"].as_u64().unwrap_or(0) as usize,
            loss: num("loss"),
            ndcg: num("ndcg"),
            mrr: num("mrr"),
            accuracy: num("accuracy"),
        };
        Ok(())
    })
}
