use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{EdgeTypeId, HeteroGraph, NodeRef, NodeTypeId};
use crate::rng::{derive, Stream};
use crate::sampler::{LabelEdge, Seed};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Softmax classification of `target_type` nodes.
    #[default]
    NodeClass,
    /// NTN scoring of `link_edge` pairs: the edge's target nodes are the
    /// queries, its source nodes the candidates.
    Link,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::NodeClass => "node-class",
            TaskKind::Link => "link",
        })
    }
}

/// Time split of the query nodes: train `< train_end`, validation
/// `[train_end, val_end)`, test `>= val_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_end: i64,
    pub val_end: i64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_end: 70,
            val_end: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub target_type: String,
    pub link_edge: String,
    /// Negative candidates per link query.
    pub negatives: usize,
    /// Query nodes per sampled subgraph.
    pub batch_size: usize,
    /// Class count; inferred from the labels when absent.
    pub classes: Option<usize>,
    pub split: SplitConfig,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            kind: TaskKind::NodeClass,
            target_type: "paper".into(),
            link_edge: "writes".into(),
            negatives: 9,
            batch_size: 64,
            classes: None,
            split: SplitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkData {
    pub edge: EdgeTypeId,
    pub candidate_type: NodeTypeId,
    /// Sorted, deduplicated positive candidates of every query node.
    pub positives: Vec<Vec<usize>>,
}

/// Query nodes of one task with their labels and time split.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub kind: TaskKind,
    pub query_type: NodeTypeId,
    pub labels: Vec<Option<usize>>,
    pub classes: usize,
    pub link: Option<LinkData>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl TaskData {
    /// `labels` (one entry per node of the target type) is required for
    /// node classification and ignored for link scoring.
    pub fn prepare(graph: &HeteroGraph, task: &TaskConfig, labels: Option<Vec<Option<usize>>>) -> Result<Self> {
        let schema = graph.schema();
        if task.batch_size == 0 {
            return Err(Error::Config("task.batch_size must be positive".into()));
        }
        if task.split.val_end < task.split.train_end {
            return Err(Error::Config("task.split.val_end precedes train_end".into()));
        }
        let (query_type, link) = match task.kind {
            TaskKind::NodeClass => {
                let ty = schema
                    .node_type(&task.target_type)
                    .ok_or_else(|| Error::Config(format!("unknown target type `{}`", task.target_type)))?;
                (ty, None)
            }
            TaskKind::Link => {
                let edge = schema
                    .edge_type(&task.link_edge)
                    .ok_or_else(|| Error::Config(format!("unknown link edge type `{}`", task.link_edge)))?;
                let def = schema.edge_def(edge);
                let positives = (0..graph.num_nodes(def.tgt))
                    .map(|q| {
                        let mut v: Vec<usize> = graph.incident(edge, q).iter().map(|i| i.src).collect();
                        v.sort_unstable();
                        v.dedup();
                        v
                    })
                    .collect();
                let link = LinkData {
                    edge,
                    candidate_type: def.src,
                    positives,
                };
                (def.tgt, Some(link))
            }
        };
        if !graph.is_event(query_type) {
            return Err(Error::Config(format!(
                "query type `{}` has no timestamps to split on",
                schema.node_name(query_type)
            )));
        }
        let n = graph.num_nodes(query_type);
        let (labels, classes) = match task.kind {
            TaskKind::NodeClass => {
                let labels = labels.ok_or_else(|| Error::Data("node classification needs labels".into()))?;
                if labels.len() != n {
                    return Err(Error::Data(format!("{} labels for {n} nodes", labels.len())));
                }
                let seen = labels.iter().flatten().max().map_or(0, |m| m + 1);
                let classes = task.classes.unwrap_or(seen);
                if let Some(&bad) = labels.iter().flatten().find(|&&y| y >= classes) {
                    return Err(Error::LabelOutOfRange { label: bad, classes });
                }
                if classes == 0 {
                    return Err(Error::Data("no labelled nodes".into()));
                }
                (labels, classes)
            }
            TaskKind::Link => (vec![None; n], 2),
        };

        let mut data = TaskData {
            kind: task.kind,
            query_type,
            labels,
            classes,
            link,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for id in 0..n {
            let usable = match &data.link {
                None => data.labels[id].is_some(),
                Some(l) => !l.positives[id].is_empty(),
            };
            if !usable {
                continue;
            }
            let t = graph.node_time(NodeRef { ty: query_type, id }).expect("event node");
            if t < task.split.train_end {
                data.train.push(id);
            } else if t < task.split.val_end {
                data.val.push(id);
            } else {
                data.test.push(id);
            }
        }
        if let Some(l) = &data.link {
            let pool = graph.num_nodes(l.candidate_type);
            let worst = l.positives.iter().map(Vec::len).max().unwrap_or(0);
            if pool < worst + task.negatives {
                return Err(Error::Config(format!(
                    "{} negatives requested but only {} candidates exist",
                    task.negatives,
                    pool - worst
                )));
            }
        }
        Ok(data)
    }

    /// Most frequent training label and its frequency on `nodes`.
    pub fn majority_baseline(&self, nodes: &[usize]) -> Option<(usize, f64)> {
        let mut counts = vec![0usize; self.classes];
        for &i in &self.train {
            if let Some(y) = self.labels[i] {
                counts[y] += 1;
            }
        }
        let best = (0..self.classes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))?;
        if nodes.is_empty() {
            return None;
        }
        let hits = nodes.iter().filter(|&&i| self.labels[i] == Some(best)).count();
        Some((best, hits as f64 / nodes.len() as f64))
    }
}

/// Everything needed to sample and score one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    /// Sampler stream id of this batch.
    pub id: u64,
    pub queries: Vec<usize>,
    pub seeds: Vec<Seed>,
    pub exclude: Vec<LabelEdge>,
    /// Node classification: the label of each query (seed `i` is query `i`).
    pub labels: Vec<usize>,
    /// Link scoring: `(query seed, candidate seed)` per pair; the pairs of
    /// query `q` occupy `q * group .. (q + 1) * group`.
    pub pairs: Vec<(usize, usize)>,
    pub targets: Vec<f64>,
    pub group: usize,
}

impl BatchPlan {
    /// Number of loss terms.
    pub fn items(&self) -> usize {
        match self.pairs.is_empty() {
            true => self.labels.len(),
            false => self.pairs.len(),
        }
    }
}

/// Splits `nodes` into batches. `order_stream` selects the shuffle (None
/// keeps input order); negatives are drawn from `(seed, Batching, draw_stream)`.
pub fn plan_batches(
    graph: &HeteroGraph,
    data: &TaskData,
    task: &TaskConfig,
    nodes: &[usize],
    seed: u64,
    order_stream: Option<u64>,
    draw_stream: u64,
    first_id: u64,
) -> Result<Vec<BatchPlan>> {
    let mut order = nodes.to_vec();
    if let Some(s) = order_stream {
        order.shuffle(&mut derive(seed, Stream::Batching, s));
    }
    let mut rng = derive(seed, Stream::Batching, draw_stream);
    let mut plans = Vec::new();
    for (b, chunk) in order.chunks(task.batch_size).enumerate() {
        let mut plan = BatchPlan {
            id: first_id + b as u64,
            queries: chunk.to_vec(),
            seeds: Vec::new(),
            exclude: Vec::new(),
            labels: Vec::new(),
            pairs: Vec::new(),
            targets: Vec::new(),
            group: 1,
        };
        match &data.link {
            None => {
                for &q in chunk {
                    plan.seeds.push(Seed {
                        node: NodeRef { ty: data.query_type, id: q },
                        time: None,
                    });
                    plan.labels.push(data.labels[q].expect("split holds labelled nodes"));
                }
            }
            Some(link) => {
                plan.group = 1 + task.negatives;
                let pool = graph.num_nodes(link.candidate_type);
                for &q in chunk {
                    let pos = &link.positives[q];
                    let t = graph.node_time(NodeRef { ty: data.query_type, id: q }).expect("event node");
                    let mut cands = vec![(pos[rng.gen_range(0..pos.len())], 1.0)];
                    while cands.len() < plan.group {
                        let c = rng.gen_range(0..pool);
                        if pos.binary_search(&c).is_err() && cands.iter().all(|&(x, _)| x != c) {
                            cands.push((c, 0.0));
                        }
                    }
                    cands.shuffle(&mut rng);
                    let qi = plan.seeds.len();
                    plan.seeds.push(Seed {
                        node: NodeRef { ty: data.query_type, id: q },
                        time: None,
                    });
                    for (c, y) in cands {
                        plan.pairs.push((qi, plan.seeds.len()));
                        plan.targets.push(y);
                        plan.seeds.push(Seed {
                            node: NodeRef { ty: link.candidate_type, id: c },
                            time: Some(t),
                        });
                    }
                    plan.exclude.extend(pos.iter().map(|&a| LabelEdge {
                        edge: link.edge,
                        src: a,
                        tgt: q,
                    }));
                }
            }
        }
        plans.push(plan);
    }
    Ok(plans)
}
