//! Subcommands behind the `hgt` binary.
//!
//! JSON outputs are pretty printed with a trailing newline and struct field
//! order as key order. Every artifact carries the config hash and root seed
//! of the run that produced it; CSV artifacts carry them in a leading `#`
//! comment line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hetgraph::io::{read_labels, read_nodes, LABELS_FILE, SCHEMA_FILE};
use crate::hetgraph::{self, bundle, BuildOptions, HeteroGraph, NodeRef, Schema};
use crate::hgt::{Hgt, HgtConfig, ParamCount};
use crate::sampler::{hg_sample, Seed, SamplerConfig};
use crate::synth::{planted, toy_academic, SynthConfig};
use crate::tensor::{load_params, save_params_stamped, RunStamp, Tape};
use crate::train::{
    evaluate, fit, history_csv, sample_plan, test_plans, validation_plans, EvalReport, FitOutput, Model, RunConfig,
    TaskData, TaskKind,
};

pub const MODEL_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const EVAL_QUERIES_FILE: &str = "eval_queries.csv";
pub const SYNTH_FILE: &str = "synth.json";

#[derive(Debug, Parser)]
#[command(name = "hgt", version, about = "Heterogeneous graph transformer: ingest, sample, train and evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a flat-file graph directory and write a binary bundle.
    Ingest(IngestArgs),
    /// Generate a synthetic graph in the flat-file layout.
    Synth(SynthArgs),
    /// Sample one subgraph around a seed file.
    Sample(SampleArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Score a checkpoint on the test (or validation) split.
    Eval(EvalArgs),
    /// Dump per-edge attention weights of a checkpoint as CSV.
    ExportAttention(ExportArgs),
    /// Count parameters per layer, enumerated and in closed form.
    ParamCount(ParamCountArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory holding schema.json, nodes.tsv, edges.tsv and feature sidecars.
    #[arg(long, env = "HGT_DATA_DIR")]
    pub input: PathBuf,
    /// Bundle directory to write (graph.bin, manifest.json).
    #[arg(long)]
    pub out: PathBuf,
    /// Add a self-loop edge type per node type.
    #[arg(long)]
    pub self_loops: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Planted-class generator settings (JSON); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub papers: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub correlation: Option<f64>,
    /// Emit the fixed toy academic graph instead of the planted generator.
    #[arg(long, conflicts_with_all = ["config", "papers", "classes", "correlation"])]
    pub toy: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, env = "HGT_DATA_DIR")]
    pub graph: PathBuf,
    /// Seed list with header `type<TAB>local_id<TAB>timestamp`; the
    /// timestamp is required for plain nodes and ignored for event nodes.
    #[arg(long)]
    pub seeds: PathBuf,
    /// Sampler settings (JSON); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    /// Batch id selecting the RNG stream.
    #[arg(long, default_value_t = 0)]
    pub batch: u64,
    #[arg(long)]
    pub self_loops: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "HGT_DATA_DIR")]
    pub graph: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    /// Run configuration (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sampling threads; forced to 1 in deterministic mode.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also train the shared-weight and no-temporal-encoding variants under
    /// the same seed and write ablation.csv.
    #[arg(long)]
    pub ablations: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, env = "HGT_DATA_DIR")]
    pub graph: PathBuf,
    /// Must match the checkpoint's task when given.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Directory for eval.json and eval_queries.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, env = "HGT_DATA_DIR")]
    pub graph: PathBuf,
    /// Seed list as for `sample`; defaults to the first test batch.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParamCountArgs {
    /// Schema file; alternatively `--graph`.
    #[arg(long, conflicts_with = "graph")]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Run configuration (JSON) supplying the model settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Share one weight set across all types.
    #[arg(long)]
    pub no_heter: bool,
    /// Disable relative temporal encoding.
    #[arg(long)]
    pub no_rte: bool,
    #[arg(long)]
    pub self_loops: bool,
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    match s {
        "node-class" => Ok(TaskKind::NodeClass),
        "link" => Ok(TaskKind::Link),
        _ => Err(format!("unknown task `{s}` (expected node-class or link)")),
    }
}

/// Checkpoint metadata written next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub config_hash: String,
    pub seed: u64,
    pub schema_hash: String,
    pub task: TaskKind,
    pub classes: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    /// The run configuration with paths removed.
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub split: Split,
    pub n_queries: usize,
    pub loss: f64,
    pub ndcg: f64,
    pub mrr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl Metrics {
    fn new(split: Split, r: &EvalReport) -> Self {
        Metrics {
            split,
            n_queries: r.n_queries,
            loss: r.loss,
            ndcg: r.ndcg,
            mrr: r.mrr,
            accuracy: r.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seed: u64,
    pub task: TaskKind,
    pub epochs: usize,
    pub params: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub test: Metrics,
    /// Test accuracy of always predicting the most frequent training class.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub majority_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutput {
    pub config_hash: String,
    pub seed: u64,
    pub schema_hash: String,
    pub task: TaskKind,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthStamp {
    pub config_hash: String,
    pub seed: u64,
    pub generator: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCountOutput {
    pub config_hash: String,
    pub seed: u64,
    pub schema_hash: String,
    #[serde(flatten)]
    pub count: ParamCount,
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} `{}` does not exist", path.display())))
    }
}

fn sha256_json<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("value serializes");
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn open_graph(dir: &Path, self_loops: bool) -> Result<HeteroGraph> {
    require(dir, "graph directory")?;
    hetgraph::open(dir, BuildOptions { self_loops })
}

fn load_schema_of(dir: &Path) -> Result<Schema> {
    require(dir, "graph directory")?;
    if dir.join(bundle::BUNDLE_FILE).exists() {
        Ok(bundle::read_bundle(dir)?.schema().clone())
    } else {
        Schema::load(&dir.join(SCHEMA_FILE))
    }
}

/// Labels of the configured target type from `labels.tsv` in `dir`.
fn load_labels(dir: &Path, graph: &HeteroGraph, cfg: &RunConfig) -> Result<Option<Vec<Option<usize>>>> {
    if cfg.task.kind != TaskKind::NodeClass {
        return Ok(None);
    }
    let path = dir.join(LABELS_FILE);
    if !path.exists() {
        return Err(Error::Data(format!("node classification needs {}", path.display())));
    }
    let ty = graph
        .schema()
        .node_type(&cfg.task.target_type)
        .ok_or_else(|| Error::Config(format!("unknown target type `{}`", cfg.task.target_type)))?;
    Ok(Some(read_labels(&path, graph.schema(), ty, graph.num_nodes(ty))?))
}

fn read_seeds(path: &Path, graph: &HeteroGraph) -> Result<Vec<Seed>> {
    let schema = graph.schema();
    let mut seeds = Vec::new();
    for rec in read_nodes(path)? {
        let ty = schema.node_type(&rec.ty).ok_or_else(|| Error::UnknownType {
            line: rec.line,
            name: rec.ty.clone(),
        })?;
        seeds.push(Seed {
            node: NodeRef { ty, id: rec.id },
            time: rec.time,
        });
    }
    Ok(seeds)
}

fn stamp_line(stamp: &RunStamp) -> String {
    format!("# config_hash={} seed={}\n", stamp.config_hash, stamp.seed)
}

/// Runs one parsed command and returns what it prints on stdout.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::ExportAttention(a) => cmd_export_attention(&a),
        Command::ParamCount(a) => cmd_param_count(&a),
    }
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<String> {
    require(&a.input, "input directory")?;
    let graph = hetgraph::io::load_dir(&a.input, BuildOptions { self_loops: a.self_loops })?;
    let manifest = bundle::write_bundle(&graph, &a.out)?;
    let labels = a.input.join(LABELS_FILE);
    if labels.exists() {
        let dst = a.out.join(LABELS_FILE);
        fs::copy(&labels, &dst).map_err(|e| Error::io(&dst, e))?;
    }
    to_json(&manifest)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String> {
    let stamp = if a.toy {
        let seed = a.seed.unwrap_or(0);
        toy_academic(seed).write(&a.out)?;
        SynthStamp {
            config_hash: sha256_json(&("toy", seed)),
            seed,
            generator: "toy".into(),
            config: None,
        }
    } else {
        let mut cfg: SynthConfig = match &a.config {
            Some(p) => read_json(p)?,
            None => SynthConfig::default(),
        };
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        if let Some(p) = a.papers {
            cfg.papers = p;
        }
        if let Some(c) = a.classes {
            cfg.classes = c;
        }
        if let Some(c) = a.correlation {
            cfg.correlation = c;
        }
        planted(&cfg)?.write(&a.out)?;
        SynthStamp {
            config_hash: sha256_json(&cfg),
            seed: cfg.seed,
            generator: "planted".into(),
            config: Some(cfg),
        }
    };
    let text = to_json(&stamp)?;
    write_text(&a.out.join(SYNTH_FILE), &text)?;
    Ok(text)
}

pub fn cmd_sample(a: &SampleArgs) -> Result<String> {
    let mut cfg: SamplerConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SamplerConfig::default(),
    };
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(d) = a.depth {
        cfg.depth = d;
    }
    if let Some(s) = a.rng_seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    require(&a.seeds, "seed file")?;
    let graph = open_graph(&a.graph, a.self_loops)?;
    let seeds = read_seeds(&a.seeds, &graph)?;
    let sg = hg_sample(&graph, &seeds, &[], &cfg, a.batch)?;
    let mut file = sg.to_file(&graph);
    let seed_list: Vec<(usize, usize, Option<i64>)> = seeds.iter().map(|s| (s.node.ty.0, s.node.id, s.time)).collect();
    file.config_hash = sha256_json(&(&cfg, a.batch, seed_list, graph.schema().hash()));
    file.rng_seed = cfg.rng_seed;
    let text = to_json(&file)?;
    write_text(&a.out, &text)?;
    Ok(format!("{} nodes, {} edges -> {}\n", sg.num_nodes(), sg.num_edges(), a.out.display()))
}

/// The run configuration of `train` after applying flags over the file.
pub fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &a.config {
        Some(p) => {
            require(p, "config file")?;
            read_json(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(g) = &a.graph {
        cfg.graph = Some(g.clone());
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    if let Some(t) = a.task {
        cfg.task.kind = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.schedule.epochs = e;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_schema(cfg: &RunConfig, graph: &HeteroGraph) -> Result<()> {
    let Some(path) = &cfg.schema else { return Ok(()) };
    require(path, "schema file")?;
    let mut want = Schema::load(path)?;
    if cfg.hgt.self_loops {
        want = want.with_self_loops();
    }
    if want.hash() != graph.schema().hash() {
        return Err(Error::SchemaMismatch {
            expected: want.hash(),
            got: graph.schema().hash(),
        });
    }
    Ok(())
}

struct Trained {
    fit: FitOutput,
    test: EvalReport,
    baseline: Option<f64>,
}

fn train_once(graph: &HeteroGraph, labels: Option<Vec<Option<usize>>>, cfg: &RunConfig, quiet: bool) -> Result<Trained> {
    let fit = fit(graph, labels, cfg, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  lr {:.3e}  train {:.6}  val {:.6}",
                r.epoch, r.lr, r.train_loss, r.val_loss
            );
        }
    })?;
    let plans = test_plans(graph, &fit.data, cfg)?;
    let test = evaluate(graph, &fit.model, &fit.best, cfg, &plans)?;
    let baseline = match fit.data.kind {
        TaskKind::NodeClass => fit.data.majority_baseline(&fit.data.test).map(|(_, f)| f),
        TaskKind::Link => None,
    };
    Ok(Trained { fit, test, baseline })
}

pub fn cmd_train(a: &TrainArgs) -> Result<String> {
    let cfg = train_config(a)?;
    let graph_dir = cfg
        .graph
        .clone()
        .ok_or_else(|| Error::Config("no graph directory (use --graph or HGT_DATA_DIR)".into()))?;
    let out = cfg.out.clone().ok_or_else(|| Error::Config("no output directory (use --out)".into()))?;
    let graph = open_graph(&graph_dir, cfg.hgt.self_loops)?;
    check_schema(&cfg, &graph)?;
    let labels = load_labels(&graph_dir, &graph, &cfg)?;
    let stamp = cfg.stamp();
    let run = train_once(&graph, labels.clone(), &cfg, a.quiet)?;

    create_dir(&out)?;
    save_params_stamped(&run.fit.best, &out, Some(stamp.clone()))?;
    let card = ModelCard {
        config_hash: stamp.config_hash.clone(),
        seed: stamp.seed,
        schema_hash: graph.schema().hash(),
        task: run.fit.data.kind,
        classes: run.fit.data.classes,
        best_epoch: run.fit.best_epoch,
        best_val_loss: run.fit.best_val_loss,
        config: RunConfig {
            graph: None,
            schema: None,
            out: None,
            ..cfg.clone()
        },
    };
    write_text(&out.join(MODEL_FILE), &to_json(&card)?)?;
    write_text(&out.join(HISTORY_FILE), &history_csv(&stamp, &run.fit.history))?;
    let summary = TrainSummary {
        config_hash: stamp.config_hash.clone(),
        seed: stamp.seed,
        task: run.fit.data.kind,
        epochs: cfg.schedule.epochs,
        params: run.fit.best.num_scalars(),
        best_epoch: run.fit.best_epoch,
        best_val_loss: run.fit.best_val_loss,
        final_train_loss: run.fit.history.last().map(|r| r.train_loss),
        test: Metrics::new(Split::Test, &run.test),
        majority_baseline: run.baseline,
    };
    let text = to_json(&summary)?;
    write_text(&out.join(SUMMARY_FILE), &text)?;

    if a.ablations {
        let mut table = stamp_line(&stamp);
        table.push_str("variant,use_heter,use_rte,params,best_epoch,best_val_loss,test_loss,test_ndcg,test_mrr,test_accuracy\n");
        let variants = [("full", true, true), ("no-heter", false, true), ("no-rte", true, false)];
        for (name, heter, rte) in variants {
            let mut vcfg = cfg.clone();
            vcfg.hgt.use_heter = heter;
            vcfg.hgt.use_rte = rte;
            let r = match name {
                "full" => None,
                _ => Some(train_once(&graph, labels.clone(), &vcfg, a.quiet)?),
            };
            let r = r.as_ref().unwrap_or(&run);
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
            table.push_str(&format!(
                "{name},{heter},{rte},{},{},{},{:e},{:e},{:e},{}\n",
                r.fit.best.num_scalars(),
                r.fit.best_epoch.map_or(String::new(), |e| e.to_string()),
                opt(r.fit.best_val_loss),
                r.test.loss,
                r.test.ndcg,
                r.test.mrr,
                opt(r.test.accuracy),
            ));
        }
        write_text(&out.join(ABLATION_FILE), &table)?;
    }
    Ok(text)
}

struct Checkpoint {
    card: ModelCard,
    model: Model,
    store: crate::tensor::ParamStore,
}

fn load_checkpoint(dir: &Path, graph: &HeteroGraph) -> Result<Checkpoint> {
    require(dir, "checkpoint directory")?;
    let card: ModelCard = read_json(&dir.join(MODEL_FILE))?;
    if card.schema_hash != graph.schema().hash() {
        return Err(Error::SchemaMismatch {
            expected: card.schema_hash.clone(),
            got: graph.schema().hash(),
        });
    }
    let model = Model::new(graph.schema(), &card.config.hgt, card.task, card.classes)?;
    let store = load_params(dir)?;
    Ok(Checkpoint { card, model, store })
}

fn card_self_loops(dir: &Path) -> Result<bool> {
    require(dir, "checkpoint directory")?;
    let card: ModelCard = read_json(&dir.join(MODEL_FILE))?;
    Ok(card.config.hgt.self_loops)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let graph = open_graph(&a.graph, card_self_loops(&a.ckpt)?)?;
    let ck = load_checkpoint(&a.ckpt, &graph)?;
    if let Some(t) = a.task {
        if t != ck.card.task {
            return Err(Error::Config(format!("checkpoint was trained for {}, not {t}", ck.card.task)));
        }
    }
    let mut cfg = ck.card.config.clone();
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    let labels = load_labels(&a.graph, &graph, &cfg)?;
    let data = TaskData::prepare(&graph, &cfg.task, labels)?;
    if data.classes != ck.card.classes {
        return Err(Error::Data(format!(
            "graph labels give {} classes, checkpoint has {}",
            data.classes, ck.card.classes
        )));
    }
    let plans = match a.split {
        Split::Test => test_plans(&graph, &data, &cfg)?,
        Split::Val => validation_plans(&graph, &data, &cfg)?,
    };
    let report = evaluate(&graph, &ck.model, &ck.store, &cfg, &plans)?;
    let out = EvalOutput {
        config_hash: ck.card.config_hash.clone(),
        seed: ck.card.seed,
        schema_hash: ck.card.schema_hash.clone(),
        task: ck.card.task,
        metrics: Metrics::new(a.split, &report),
    };
    let text = to_json(&out)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_text(&dir.join(EVAL_FILE), &text)?;
        let stamp = RunStamp {
            config_hash: out.config_hash.clone(),
            seed: out.seed,
        };
        let mut csv = stamp_line(&stamp);
        csv.push_str("query,target,predicted,rank,ndcg,mrr\n");
        for q in &report.queries {
            csv.push_str(&format!(
                "{},{},{},{},{:e},{:e}\n",
                q.query, q.target, q.predicted, q.rank, q.ndcg, q.mrr
            ));
        }
        write_text(&dir.join(EVAL_QUERIES_FILE), &csv)?;
    }
    Ok(text)
}

pub fn cmd_export_attention(a: &ExportArgs) -> Result<String> {
    let graph = open_graph(&a.graph, card_self_loops(&a.ckpt)?)?;
    let ck = load_checkpoint(&a.ckpt, &graph)?;
    let cfg = &ck.card.config;
    let batch = match &a.seeds {
        Some(p) => {
            require(p, "seed file")?;
            let seeds = read_seeds(p, &graph)?;
            let sg = hg_sample(&graph, &seeds, &[], &cfg.sampler_config(), 0)?;
            let features = crate::hgt::gather_features(&graph, &sg);
            crate::train::Sampled { sg, features }
        }
        None => {
            let labels = load_labels(&a.graph, &graph, cfg)?;
            let data = TaskData::prepare(&graph, &cfg.task, labels)?;
            let plans = test_plans(&graph, &data, cfg)?;
            let plan = plans.first().ok_or_else(|| Error::Data("test split is empty".into()))?;
            sample_plan(&graph, &cfg.sampler_config(), plan)?
        }
    };
    let mut tape = Tape::new();
    let fwd = ck.model.hgt.forward(&mut tape, &ck.store, &batch.sg, &batch.features, None)?;
    let schema = graph.schema();
    let heads = cfg.hgt.heads;
    let stamp = RunStamp {
        config_hash: ck.card.config_hash.clone(),
        seed: ck.card.seed,
    };
    let mut csv = stamp_line(&stamp);
    csv.push_str("layer,relation,target_type,target,target_time,source_type,source,source_time");
    for k in 0..heads {
        csv.push_str(&format!(",head_{k}"));
    }
    csv.push('\n');
    let mut rows = 0usize;
    for rec in &fwd.attention {
        let attn = tape.value(rec.attn);
        let mut r = 0;
        for &(et, count) in &rec.parts {
            let def = schema.edge_def(et);
            for se in batch.sg.edges[et.0].iter().take(count) {
                let (sid, stime) = batch.sg.nodes[def.src.0][se.src];
                let (tid, ttime) = batch.sg.nodes[def.tgt.0][se.tgt];
                csv.push_str(&format!(
                    "{},{},{},{tid},{ttime},{},{sid},{stime}",
                    rec.layer,
                    def.name,
                    schema.node_name(def.tgt),
                    schema.node_name(def.src)
                ));
                for v in attn.row_slice(r) {
                    csv.push_str(&format!(",{v:e}"));
                }
                csv.push('\n');
                r += 1;
            }
        }
        rows += r;
    }
    write_text(&a.out, &csv)?;
    Ok(format!("{rows} attention rows -> {}\n", a.out.display()))
}

pub fn cmd_param_count(a: &ParamCountArgs) -> Result<String> {
    let mut cfg: RunConfig = match &a.config {
        Some(p) => {
            require(p, "config file")?;
            read_json(p)?
        }
        None => RunConfig::default(),
    };
    let schema = match (&a.schema, &a.graph) {
        (Some(p), _) => {
            require(p, "schema file")?;
            Schema::load(p)?
        }
        (None, Some(d)) => load_schema_of(d)?,
        (None, None) => match &cfg.schema {
            Some(p) => Schema::load(p)?,
            None => return Err(Error::Config("param-count needs --schema or --graph".into())),
        },
    };
    let h: &mut HgtConfig = &mut cfg.hgt;
    if let Some(v) = a.hidden {
        h.hidden = v;
    }
    if let Some(v) = a.heads {
        h.heads = v;
    }
    if let Some(v) = a.layers {
        h.layers = v;
    }
    if a.no_heter {
        h.use_heter = false;
    }
    if a.no_rte {
        h.use_rte = false;
    }
    if a.self_loops {
        h.self_loops = true;
    }
    let hgt = Hgt::new(&schema, cfg.hgt.clone())?;
    let schema_hash = hgt.schema().hash();
    to_json(&ParamCountOutput {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        schema_hash,
        count: hgt.param_count(),
    })
}
