//! Mini-batch training: AdamW with decoupled weight decay, cosine annealing
//! per epoch, global-norm gradient clipping and model selection on
//! validation loss. Each step consumes one sampled subgraph.

mod data;
mod optim;
mod pipeline;

use std::path::PathBuf;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use data::{plan_batches, BatchPlan, LinkData, SplitConfig, TaskConfig, TaskData, TaskKind};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, OptimizerState, ScheduleConfig};
pub use pipeline::{for_each_batch, sample_plan, Sampled};

use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, Schema};
use crate::hgt::{Hgt, HgtConfig};
use crate::rng::{derive, Stream};
use crate::sampler::SamplerConfig;
use crate::tasks::{self, ClassificationHead, NtnHead, NTN_SLICES};
use crate::tensor::{ParamStore, RunStamp, Tape, Tensor, Var};

/// Every knob of a run. The root `seed` drives all randomness; the
/// sampler's own `rng_seed` is overridden by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Forces one sampling worker.
    pub deterministic: bool,
    pub workers: usize,
    pub sampler: SamplerConfig,
    pub hgt: HgtConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamWConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub task: TaskConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph: None,
            schema: None,
            out: None,
            seed: 0,
            deterministic: true,
            workers: 1,
            sampler: SamplerConfig::default(),
            hgt: HgtConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: AdamWConfig::default(),
            clip_norm: Some(1.0),
            task: TaskConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.hgt.validate()?;
        self.schedule.validate()?;
        self.optimizer.validate()?;
        self.sampler_config().validate()?;
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        if self.task.batch_size == 0 {
            return Err(Error::Config("task.batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            rng_seed: self.seed,
            ..self.sampler.clone()
        }
    }

    pub fn effective_workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers.max(1)
        }
    }

    /// SHA-256 of the canonical JSON of every setting that affects results
    /// (paths and the worker count excluded).
    pub fn hash(&self) -> String {
        let canon = RunConfig {
            graph: None,
            schema: None,
            out: None,
            workers: 1,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn stamp(&self) -> RunStamp {
        RunStamp {
            config_hash: self.hash(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Head {
    Class(ClassificationHead),
    Link(NtnHead),
}

/// Encoder plus task head.
#[derive(Debug, Clone)]
pub struct Model {
    pub hgt: Hgt,
    pub head: Head,
}

impl Model {
    pub fn new(schema: &Schema, cfg: &HgtConfig, kind: TaskKind, classes: usize) -> Result<Self> {
        let hgt = Hgt::new(schema, cfg.clone())?;
        let head = match kind {
            TaskKind::NodeClass => Head::Class(ClassificationHead::new(cfg.hidden, classes)?),
            TaskKind::Link => Head::Link(NtnHead::new(cfg.hidden, NTN_SLICES)?),
        };
        Ok(Model { hgt, head })
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let mut rng = derive(seed, Stream::Init, 0);
        self.hgt.init_params(&mut store, &mut rng)?;
        match self.head {
            Head::Class(h) => h.init_params(&mut store, &mut rng)?,
            Head::Link(h) => h.init_params(&mut store, &mut rng)?,
        }
        Ok(store)
    }

    /// Loss of one batch and the head output: class logits `[queries x C]`
    /// or pair logits `[pairs x 1]`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        plan: &BatchPlan,
        batch: &Sampled,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Var)> {
        let out = self.hgt.forward(tape, store, &batch.sg, &batch.features, rng)?;
        let rows = |seed: usize| batch.sg.seeds[seed];
        match self.head {
            Head::Class(head) => {
                let ty = rows(0).0;
                let h = out.h[ty.0].ok_or_else(|| Error::Data("no query rows in batch".into()))?;
                let idx: Vec<usize> = (0..plan.labels.len()).map(|i| rows(i).1).collect();
                let q = tape.gather_rows(h, idx)?;
                head.classify_loss(tape, store, q, &plan.labels)
            }
            Head::Link(head) => {
                let (qt, ct) = (rows(plan.pairs[0].0).0, rows(plan.pairs[0].1).0);
                let hq = out.h[qt.0].ok_or_else(|| Error::Data("no query rows in batch".into()))?;
                let hc = out.h[ct.0].ok_or_else(|| Error::Data("no candidate rows in batch".into()))?;
                let p = tape.gather_rows(hq, plan.pairs.iter().map(|&(q, _)| rows(q).1).collect())?;
                let a = tape.gather_rows(hc, plan.pairs.iter().map(|&(_, c)| rows(c).1).collect())?;
                head.link_loss(tape, store, p, a, &plan.targets)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: Model,
    pub data: TaskData,
    /// Parameters of the epoch with the lowest validation loss (the
    /// initialisation when no epoch ran).
    pub best: ParamStore,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub last: ParamStore,
    pub history: Vec<EpochRecord>,
}

const VAL_STREAM: u64 = 1 << 40;
const TEST_STREAM: u64 = 2 << 40;

/// Plans for a fixed evaluation split; identical on every call.
pub fn eval_plans(graph: &HeteroGraph, data: &TaskData, cfg: &RunConfig, nodes: &[usize], stream: u64) -> Result<Vec<BatchPlan>> {
    plan_batches(graph, data, &cfg.task, nodes, cfg.seed, None, stream, stream)
}

pub fn validation_plans(graph: &HeteroGraph, data: &TaskData, cfg: &RunConfig) -> Result<Vec<BatchPlan>> {
    eval_plans(graph, data, cfg, &data.val, VAL_STREAM)
}

pub fn test_plans(graph: &HeteroGraph, data: &TaskData, cfg: &RunConfig) -> Result<Vec<BatchPlan>> {
    eval_plans(graph, data, cfg, &data.test, TEST_STREAM)
}

/// Item-weighted mean loss over `plans` without dropout.
pub fn mean_loss(graph: &HeteroGraph, model: &Model, store: &ParamStore, cfg: &RunConfig, plans: &[BatchPlan]) -> Result<f64> {
    let mut total = 0.0;
    let mut items = 0usize;
    for_each_batch(graph, &cfg.sampler_config(), plans, cfg.effective_workers(), |_, plan, batch| {
        let mut tape = Tape::new();
        let (loss, _) = model.batch_loss(&mut tape, store, plan, &batch, None)?;
        total += tape.value(loss).data()[0] * plan.items() as f64;
        items += plan.items();
        Ok(())
    })?;
    Ok(if items == 0 { f64::NAN } else { total / items as f64 })
}

/// Trains on `data.train`, selecting on `data.val`. `on_epoch` sees each
/// history row as it is produced.
pub fn fit(
    graph: &HeteroGraph,
    labels: Option<Vec<Option<usize>>>,
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutput> {
    cfg.validate()?;
    let data = TaskData::prepare(graph, &cfg.task, labels)?;
    if data.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let model = Model::new(graph.schema(), &cfg.hgt, data.kind, data.classes)?;
    let mut store = model.init_params(cfg.seed)?;
    let mut state = OptimizerState::new(&store, cfg.optimizer);
    let sampler = cfg.sampler_config();
    let workers = cfg.effective_workers();
    let val_plans = validation_plans(graph, &data, cfg)?;
    let per_epoch = data.train.len().div_ceil(cfg.task.batch_size) as u64;

    let mut best = store.clone();
    let mut best_epoch = None;
    let mut best_val_loss: Option<f64> = None;
    let mut history = Vec::with_capacity(cfg.schedule.epochs);
    for epoch in 0..cfg.schedule.epochs {
        let lr = cosine_lr(epoch, &cfg.schedule)?;
        let plans = plan_batches(
            graph,
            &data,
            &cfg.task,
            &data.train,
            cfg.seed,
            Some(epoch as u64),
            (1 << 20) + epoch as u64,
            epoch as u64 * per_epoch,
        )?;
        let mut total = 0.0;
        let mut items = 0usize;
        for_each_batch(graph, &sampler, &plans, workers, |_, plan, batch| {
            store.zero_grad();
            let mut tape = Tape::new();
            let mut drop_rng = derive(cfg.seed, Stream::Dropout, plan.id);
            let rng: Option<&mut dyn RngCore> = (cfg.hgt.dropout > 0.0).then_some(&mut drop_rng as &mut dyn RngCore);
            let (loss, _) = model.batch_loss(&mut tape, &store, plan, &batch, rng)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { batch: plan.id as usize });
            }
            tape.backward(loss, &mut store)?;
            if let Some(c) = cfg.clip_norm {
                store.clip_grad_norm(c);
            }
            adamw_step(&mut store, &mut state, lr)?;
            total += value * plan.items() as f64;
            items += plan.items();
            Ok(())
        })?;
        let train_loss = total / items as f64;
        let val_loss = mean_loss(graph, &model, &store, cfg, &val_plans)?;
        if val_loss.is_finite() && best_val_loss.is_none_or(|b| val_loss < b) {
            best = store.clone();
            best_epoch = Some(epoch);
            best_val_loss = Some(val_loss);
        }
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(FitOutput {
        model,
        data,
        best,
        best_epoch,
        best_val_loss,
        last: store,
        history,
    })
}

/// `history.csv` contents: a provenance comment line, then
/// `epoch,lr,train_loss,val_loss`.
pub fn history_csv(stamp: &RunStamp, history: &[EpochRecord]) -> String {
    let mut s = format!("# config_hash={} seed={}\nepoch,lr,train_loss,val_loss\n", stamp.config_hash, stamp.seed);
    for r in history {
        s.push_str(&format!("{},{:e},{:e},{:e}\n", r.epoch, r.lr, r.train_loss, r.val_loss));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: usize,
    /// Node classification: true class. Link scoring: the positive candidate.
    pub target: usize,
    /// Predicted class or top-ranked candidate.
    pub predicted: usize,
    pub rank: usize,
    pub ndcg: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub n_queries: usize,
    pub loss: f64,
    pub ndcg: f64,
    pub mrr: f64,
    /// Node classification only.
    pub accuracy: Option<f64>,
    pub queries: Vec<QueryResult>,
}

/// Scores every plan. Node classification ranks the classes of each query
/// by logit with the true class as the single positive; link scoring ranks
/// each query's candidate group.
pub fn evaluate(graph: &HeteroGraph, model: &Model, store: &ParamStore, cfg: &RunConfig, plans: &[BatchPlan]) -> Result<EvalReport> {
    let mut queries = Vec::new();
    let mut total = 0.0;
    let mut items = 0usize;
    for_each_batch(graph, &cfg.sampler_config(), plans, cfg.effective_workers(), |_, plan, batch| {
        let mut tape = Tape::new();
        let (loss, out) = model.batch_loss(&mut tape, store, plan, &batch, None)?;
        total += tape.value(loss).data()[0] * plan.items() as f64;
        items += plan.items();
        let out: &Tensor = tape.value(out);
        match model.head {
            Head::Class(_) => {
                for (r, (&q, &y)) in plan.queries.iter().zip(&plan.labels).enumerate() {
                    let scores = out.row_slice(r);
                    let rels: Vec<f64> = (0..scores.len()).map(|c| (c == y) as u8 as f64).collect();
                    queries.push(score_query(q, y, tasks::argmax(scores), scores, &rels)?);
                }
            }
            Head::Link(_) => {
                for (qi, &q) in plan.queries.iter().enumerate() {
                    let span = qi * plan.group..(qi + 1) * plan.group;
                    let scores = &out.data()[span.clone()];
                    let rels = &plan.targets[span.clone()];
                    let cands: Vec<usize> = plan.pairs[span].iter().map(|&(_, c)| plan.seeds[c].node.id).collect();
                    let pos = rels.iter().position(|&y| y > 0.0).expect("one positive per group");
                    let top = cands[tasks::argmax(scores)];
                    queries.push(score_query(q, cands[pos], top, scores, rels)?);
                }
            }
        }
        Ok(())
    })?;
    let n = queries.len();
    let mean = |f: fn(&QueryResult) -> f64| if n == 0 { 0.0 } else { queries.iter().map(f).sum::<f64>() / n as f64 };
    let accuracy = matches!(model.head, Head::Class(_)).then(|| mean(|q| (q.predicted == q.target) as u8 as f64));
    Ok(EvalReport {
        task: match model.head {
            Head::Class(_) => TaskKind::NodeClass.to_string(),
            Head::Link(_) => TaskKind::Link.to_string(),
        },
        n_queries: n,
        loss: if items == 0 { f64::NAN } else { total / items as f64 },
        ndcg: mean(|q| q.ndcg),
        mrr: mean(|q| q.mrr),
        accuracy,
        queries,
    })
}

fn score_query(query: usize, target: usize, predicted: usize, scores: &[f64], rels: &[f64]) -> Result<QueryResult> {
    let ranked = tasks::rank_by_score(scores, rels);
    let bin: Vec<bool> = ranked.iter().map(|&r| r > 0.0).collect();
    let rr = tasks::mrr(&bin)?;
    Ok(QueryResult {
        query,
        target,
        predicted,
        rank: (1.0 / rr).round() as usize,
        ndcg: tasks::ndcg(&ranked, None),
        mrr: rr,
    })
}
