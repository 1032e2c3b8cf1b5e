use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Entry;
use crate::hetgraph::{EdgeTypeId, HeteroGraph, NodeTypeId};

/// Edge of a sampled subgraph; endpoints index into the per-type node lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubEdge {
    pub src: usize,
    pub tgt: usize,
    pub time: i64,
}

/// Output of one sampling run: timestamped node entries grouped by type and
/// the adjacency among them, grouped by edge type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledSubgraph {
    /// `(node id, assigned time)` per node type, in insertion order
    /// (seeds first).
    pub nodes: Vec<Vec<(usize, i64)>>,
    /// Per edge type.
    pub edges: Vec<Vec<SubEdge>>,
    /// Position of each seed, in the order seeds were given.
    pub seeds: Vec<(NodeTypeId, usize)>,
    index: HashMap<Entry, usize>,
    is_seed: Vec<Vec<bool>>,
}

impl SampledSubgraph {
    pub(crate) fn empty(num_types: usize) -> Self {
        SampledSubgraph {
            nodes: vec![Vec::new(); num_types],
            edges: Vec::new(),
            seeds: Vec::new(),
            index: HashMap::new(),
            is_seed: vec![Vec::new(); num_types],
        }
    }

    /// Assembles a subgraph directly; used by tests and by callers that build
    /// batches without sampling.
    pub fn from_parts(nodes: Vec<Vec<(usize, i64)>>, edges: Vec<Vec<SubEdge>>) -> Self {
        let mut sg = SampledSubgraph::empty(nodes.len());
        for (t, list) in nodes.iter().enumerate() {
            for &(id, time) in list {
                sg.push(Entry { ty: NodeTypeId(t), id, time }, false);
            }
        }
        sg.edges = edges;
        sg
    }

    pub(crate) fn push(&mut self, e: Entry, seed: bool) {
        let list = &mut self.nodes[e.ty.0];
        self.index.insert(e, list.len());
        list.push((e.id, e.time));
        self.is_seed[e.ty.0].push(seed);
    }

    pub(crate) fn ensure_edge_types(&mut self, n: usize) {
        if self.edges.len() < n {
            self.edges.resize(n, Vec::new());
        }
    }

    pub fn position(&self, e: &Entry) -> Option<usize> {
        self.index.get(e).copied()
    }

    pub fn contains(&self, e: &Entry) -> bool {
        self.index.contains_key(e)
    }

    pub fn is_seed(&self, ty: NodeTypeId, idx: usize) -> bool {
        self.is_seed[ty.0].get(idx).copied().unwrap_or(false)
    }

    pub fn entry(&self, ty: NodeTypeId, idx: usize) -> Entry {
        let (id, time) = self.nodes[ty.0][idx];
        Entry { ty, id, time }
    }

    pub fn entries(&self) -> impl Iterator<Item = Entry> + '_ {
        self.nodes.iter().enumerate().flat_map(|(t, list)| {
            list.iter().map(move |&(id, time)| Entry {
                ty: NodeTypeId(t),
                id,
                time,
            })
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// JSON view with names resolved against `graph`.
    pub fn to_file(&self, graph: &HeteroGraph) -> SubgraphFile {
        let s = graph.schema();
        let nodes = self
            .entries()
            .map(|e| SubgraphNode {
                ty: s.node_name(e.ty).to_string(),
                id: e.id,
                time: e.time,
                seed: self.is_seed(e.ty, self.index[&e]),
            })
            .collect();
        let mut edges = Vec::new();
        for (et, list) in self.edges.iter().enumerate() {
            let def = s.edge_def(EdgeTypeId(et));
            for se in list {
                let (sid, stime) = self.nodes[def.src.0][se.src];
                let (tid, ttime) = self.nodes[def.tgt.0][se.tgt];
                edges.push(SubgraphEdge {
                    edge_type: def.name.clone(),
                    src_type: s.node_name(def.src).to_string(),
                    src: sid,
                    src_time: stime,
                    tgt_type: s.node_name(def.tgt).to_string(),
                    tgt: tid,
                    tgt_time: ttime,
                    timestamp: se.time,
                });
            }
        }
        SubgraphFile {
            config_hash: String::new(),
            rng_seed: 0,
            nodes,
            edges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphNode {
    #[serde(rename = "type")]
    pub ty: String,
    pub id: usize,
    pub time: i64,
    pub seed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphEdge {
    pub edge_type: String,
    pub src_type: String,
    pub src: usize,
    pub src_time: i64,
    pub tgt_type: String,
    pub tgt: usize,
    pub tgt_time: i64,
    pub timestamp: i64,
}

/// `subgraph.json` written by the `sample` subcommand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphFile {
    pub config_hash: String,
    pub rng_seed: u64,
    pub nodes: Vec<SubgraphNode>,
    pub edges: Vec<SubgraphEdge>,
}
