//! Heterogeneous mini-batch sampling.
//!
//! Each node type keeps its own budget of candidate nodes. A candidate's
//! budget value accumulates `1 / deg_rel(t)` from every already-sampled
//! neighbor `t` it is reached from, and each round draws up to `n` candidates
//! per type with probability proportional to the squared budget value. Plain
//! (untimed) nodes inherit the timestamp of the node they were reached from,
//! and a node reached at two different times is two distinct candidates.

mod subgraph;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use subgraph::{SampledSubgraph, SubEdge, SubgraphFile};

use crate::error::{Error, Result};
use crate::hetgraph::{EdgeOrigin, EdgeTypeId, HeteroGraph, NodeRef, NodeTypeId};
use crate::rng::{derive, Stream};

/// A timestamp-instantiated node: the unit of sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entry {
    pub ty: NodeTypeId,
    pub id: usize,
    pub time: i64,
}

/// A seed node. Event nodes may omit the time and use their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub node: NodeRef,
    pub time: Option<i64>,
}

/// An edge withheld from the reconstructed adjacency (its mirror is withheld
/// too), typically a link whose existence is the prediction label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelEdge {
    pub edge: EdgeTypeId,
    pub src: usize,
    pub tgt: usize,
}

/// Which edges among the sampled nodes are kept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    /// Every graph edge between two output entries (under timestamp inheritance).
    #[default]
    Induced,
    /// Only edges along which a sampled entry was reached, plus their mirrors.
    Traversed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Entries drawn per node type per round.
    pub n: usize,
    /// Number of rounds.
    pub depth: usize,
    pub rng_seed: u64,
    pub with_replacement: bool,
    pub reconstruction: Reconstruction,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n: 32,
            depth: 3,
            rng_seed: 0,
            with_replacement: false,
            reconstruction: Reconstruction::Induced,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.depth == 0 {
            return Err(Error::Config("sampler: n and depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Candidate budget for one node type: `(node id, time) -> cumulative
/// normalized degree`. Key order gives lowest-node-id tie breaking.
pub type TypeBudget = BTreeMap<(usize, i64), f64>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Budget {
    pub per_type: Vec<TypeBudget>,
}

impl Budget {
    pub fn new(num_types: usize) -> Self {
        Budget {
            per_type: vec![TypeBudget::new(); num_types],
        }
    }

    pub fn contains(&self, e: &Entry) -> bool {
        self.per_type[e.ty.0].contains_key(&(e.id, e.time))
    }

    pub fn get(&self, e: &Entry) -> Option<f64> {
        self.per_type[e.ty.0].get(&(e.id, e.time)).copied()
    }

    pub fn len(&self) -> usize {
        self.per_type.iter().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Timestamp a node takes when reached from a parent at `parent_time`.
pub fn assign_timestamp(graph: &HeteroGraph, node: NodeRef, parent_time: i64) -> i64 {
    graph.node_time(node).unwrap_or(parent_time)
}

/// Adds the unsampled neighbors of `t` to the budget, each gaining
/// `1 / deg_rel(t)` per incident edge under relation `rel`.
///
/// Returns the candidate entries touched, in visit order.
pub fn add_in_budget(budget: &mut Budget, t: Entry, graph: &HeteroGraph, sampled: &HashSet<Entry>) -> Vec<Entry> {
    let mut touched = Vec::new();
    let schema = graph.schema();
    for rel in schema.relations_into(t.ty) {
        let row = graph.incident(rel.edge, t.id);
        if row.is_empty() {
            continue;
        }
        let norm = 1.0 / row.len() as f64;
        for inc in row {
            let s = Entry {
                ty: rel.src,
                id: inc.src,
                time: assign_timestamp(graph, NodeRef { ty: rel.src, id: inc.src }, t.time),
            };
            if sampled.contains(&s) {
                continue;
            }
            *budget.per_type[s.ty.0].entry((s.id, s.time)).or_insert(0.0) += norm;
            touched.push(s);
        }
    }
    touched
}

/// Squared-budget sampling law, in key order.
pub fn sampling_prob(budget: &TypeBudget) -> Result<Vec<f64>> {
    if budget.is_empty() {
        return Err(Error::EmptyBudget);
    }
    let sq: Vec<f64> = budget.values().map(|v| v * v).collect();
    let total: f64 = sq.iter().sum();
    Ok(sq.into_iter().map(|v| v / total).collect())
}

/// One inverse-CDF draw over non-negative weights (need not be normalized).
pub fn draw_categorical(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draws `k` distinct indices, renormalizing after each draw.
fn draw_without_replacement(probs: &[f64], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    if k >= probs.len() {
        return (0..probs.len()).collect();
    }
    let mut w = probs.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let i = draw_categorical(&w, rng);
        w[i] = 0.0;
        out.push(i);
    }
    out
}

fn draw_with_replacement(probs: &[f64], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let i = draw_categorical(probs, rng);
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Budget snapshot taken right before a draw.
#[derive(Debug, Clone)]
pub struct DrawRecord {
    pub round: usize,
    pub ty: NodeTypeId,
    pub budget: TypeBudget,
    pub drawn: Vec<Entry>,
}

/// Optional instrumentation of a sampling run.
#[derive(Debug, Clone, Default)]
pub struct SampleTrace {
    pub draws: Vec<DrawRecord>,
    /// `(candidate, parent)` for every budget increment, in order.
    pub expansions: Vec<(Entry, Entry)>,
    /// Budget size after each round.
    pub budget_after_round: Vec<Budget>,
}

fn resolve_seed(graph: &HeteroGraph, seed: &Seed) -> Result<Entry> {
    let node = seed.node;
    if node.ty.0 >= graph.schema().num_node_types() || node.id >= graph.num_nodes(node.ty) {
        return Err(Error::Data(format!("seed {}:{} does not exist", node.ty.0, node.id)));
    }
    let time = match (graph.node_time(node), seed.time) {
        (Some(own), _) => own,
        (None, Some(t)) => t,
        (None, None) => {
            return Err(Error::MissingTimestamp {
                ty: graph.schema().node_name(node.ty).to_string(),
                id: node.id,
            })
        }
    };
    Ok(Entry {
        ty: node.ty,
        id: node.id,
        time,
    })
}

/// Samples a subgraph around `seeds`. `batch` selects the RNG stream so that
/// different mini-batches under one seed draw independently.
pub fn hg_sample(
    graph: &HeteroGraph,
    seeds: &[Seed],
    exclude: &[LabelEdge],
    cfg: &SamplerConfig,
    batch: u64,
) -> Result<SampledSubgraph> {
    run(graph, seeds, exclude, cfg, batch, None)
}

/// [`hg_sample`] that also records every draw and budget increment.
pub fn hg_sample_traced(
    graph: &HeteroGraph,
    seeds: &[Seed],
    exclude: &[LabelEdge],
    cfg: &SamplerConfig,
    batch: u64,
) -> Result<(SampledSubgraph, SampleTrace)> {
    let mut trace = SampleTrace::default();
    let sg = run(graph, seeds, exclude, cfg, batch, Some(&mut trace))?;
    Ok((sg, trace))
}

fn run(
    graph: &HeteroGraph,
    seeds: &[Seed],
    exclude: &[LabelEdge],
    cfg: &SamplerConfig,
    batch: u64,
    mut trace: Option<&mut SampleTrace>,
) -> Result<SampledSubgraph> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::EmptySeedSet);
    }
    let nt = graph.schema().num_node_types();
    let mut rng: ChaCha8Rng = derive(cfg.rng_seed, Stream::Sampler, batch);
    let mut out = SampledSubgraph::empty(nt);
    let mut sampled: HashSet<Entry> = HashSet::new();
    let mut budget = Budget::new(nt);
    let mut parents: HashMap<Entry, Vec<Entry>> = HashMap::new();

    let mut seed_entries = Vec::with_capacity(seeds.len());
    for s in seeds {
        let e = resolve_seed(graph, s)?;
        seed_entries.push(e);
        if sampled.insert(e) {
            out.push(e, true);
        }
    }
    out.seeds = seed_entries.iter().map(|e| (e.ty, out.position(e).unwrap())).collect();

    let expand = |budget: &mut Budget,
                      t: Entry,
                      sampled: &HashSet<Entry>,
                      trace: &mut Option<&mut SampleTrace>,
                      parents: &mut HashMap<Entry, Vec<Entry>>| {
        let touched = add_in_budget(budget, t, graph, sampled);
        if cfg.reconstruction == Reconstruction::Traversed {
            for &c in &touched {
                parents.entry(c).or_default().push(t);
            }
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.expansions.extend(touched.into_iter().map(|c| (c, t)));
        }
    };

    let initial: Vec<Entry> = out.entries().collect();
    for t in initial {
        expand(&mut budget, t, &sampled, &mut trace, &mut parents);
    }

    for round in 0..cfg.depth {
        for ty in 0..nt {
            if budget.per_type[ty].is_empty() {
                continue;
            }
            let probs = sampling_prob(&budget.per_type[ty])?;
            let k = cfg.n.min(probs.len());
            let picks = if cfg.with_replacement {
                draw_with_replacement(&probs, k, &mut rng)
            } else {
                draw_without_replacement(&probs, k, &mut rng)
            };
            let keys: Vec<(usize, i64)> = budget.per_type[ty].keys().copied().collect();
            let drawn: Vec<Entry> = picks
                .iter()
                .map(|&i| Entry {
                    ty: NodeTypeId(ty),
                    id: keys[i].0,
                    time: keys[i].1,
                })
                .collect();
            if let Some(tr) = trace.as_deref_mut() {
                tr.draws.push(DrawRecord {
                    round,
                    ty: NodeTypeId(ty),
                    budget: budget.per_type[ty].clone(),
                    drawn: drawn.clone(),
                });
            }
            for t in drawn {
                out.push(t, false);
                sampled.insert(t);
                expand(&mut budget, t, &sampled, &mut trace, &mut parents);
                budget.per_type[ty].remove(&(t.id, t.time));
            }
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.budget_after_round.push(budget.clone());
        }
    }

    let excluded: HashSet<(usize, usize, usize)> = exclude
        .iter()
        .flat_map(|l| {
            let inv = graph.schema().inverse(l.edge);
            [(l.edge.0, l.src, l.tgt), (inv.0, l.tgt, l.src)]
        })
        .collect();
    out.ensure_edge_types(graph.schema().num_edge_types());
    match cfg.reconstruction {
        Reconstruction::Induced => out.reconstruct_induced(graph, &excluded),
        Reconstruction::Traversed => out.reconstruct_traversed(graph, &excluded, &parents),
    }
    Ok(out)
}

impl SampledSubgraph {
    fn reconstruct_induced(&mut self, graph: &HeteroGraph, excluded: &HashSet<(usize, usize, usize)>) {
        let schema = graph.schema();
        for tt in 0..self.nodes.len() {
            let tgt_ty = NodeTypeId(tt);
            for j in 0..self.nodes[tt].len() {
                let (t, t_time) = self.nodes[tt][j];
                for rel in schema.relations_into(tgt_ty) {
                    let self_loop = schema.edge_def(rel.edge).origin == EdgeOrigin::SelfLoop;
                    for inc in graph.incident(rel.edge, t) {
                        if excluded.contains(&(rel.edge.0, inc.src, t)) {
                            continue;
                        }
                        let src = Entry {
                            ty: rel.src,
                            id: inc.src,
                            time: if self_loop {
                                t_time
                            } else {
                                assign_timestamp(graph, NodeRef { ty: rel.src, id: inc.src }, t_time)
                            },
                        };
                        if let Some(i) = self.position(&src) {
                            let time = if self_loop { t_time } else { inc.time };
                            self.edges[rel.edge.0].push(SubEdge { src: i, tgt: j, time });
                        }
                    }
                }
            }
        }
    }

    fn reconstruct_traversed(
        &mut self,
        graph: &HeteroGraph,
        excluded: &HashSet<(usize, usize, usize)>,
        parents: &HashMap<Entry, Vec<Entry>>,
    ) {
        let schema = graph.schema();
        let mut pairs: HashSet<(Entry, Entry)> = HashSet::new();
        for e in self.entries() {
            if let Some(ps) = parents.get(&e) {
                for &p in ps {
                    pairs.insert((e, p));
                    pairs.insert((p, e));
                }
            }
            pairs.insert((e, e));
        }
        for tt in 0..self.nodes.len() {
            let tgt_ty = NodeTypeId(tt);
            for j in 0..self.nodes[tt].len() {
                let (t, t_time) = self.nodes[tt][j];
                let tgt = Entry { ty: tgt_ty, id: t, time: t_time };
                for rel in schema.relations_into(tgt_ty) {
                    let self_loop = schema.edge_def(rel.edge).origin == EdgeOrigin::SelfLoop;
                    for inc in graph.incident(rel.edge, t) {
                        if excluded.contains(&(rel.edge.0, inc.src, t)) {
                            continue;
                        }
                        let src_time = if self_loop {
                            t_time
                        } else {
                            assign_timestamp(graph, NodeRef { ty: rel.src, id: inc.src }, t_time)
                        };
                        let src = Entry { ty: rel.src, id: inc.src, time: src_time };
                        if !pairs.contains(&(src, tgt)) {
                            continue;
                        }
                        if let Some(i) = self.position(&src) {
                            let time = if self_loop { t_time } else { inc.time };
                            self.edges[rel.edge.0].push(SubEdge { src: i, tgt: j, time });
                        }
                    }
                }
            }
        }
    }
}
