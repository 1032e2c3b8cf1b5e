use serde::{Deserialize, Serialize};

use super::schema::{EdgeOrigin, EdgeTypeId, MetaRelation, NodeTypeId, Schema};
use crate::error::{Error, Result};

/// Global node identity: node type plus dense per-type index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub ty: NodeTypeId,
    pub id: usize,
}

/// One incoming edge as seen from its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Incident {
    pub src: usize,
    pub time: i64,
}

/// Compressed sparse rows keyed by target node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    entries: Vec<Incident>,
}

impl Adjacency {
    /// Stable counting sort of `(target, incident)` pairs; per-target order is
    /// insertion order.
    pub(crate) fn from_pairs(num_targets: usize, pairs: &[(usize, Incident)]) -> Self {
        let mut offsets = vec![0usize; num_targets + 1];
        for &(t, _) in pairs {
            offsets[t + 1] += 1;
        }
        for i in 0..num_targets {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut entries = vec![Incident { src: 0, time: 0 }; pairs.len()];
        for &(t, inc) in pairs {
            entries[cursor[t]] = inc;
            cursor[t] += 1;
        }
        Adjacency { offsets, entries }
    }

    pub(crate) fn from_raw(offsets: Vec<usize>, entries: Vec<Incident>) -> Result<Self> {
        let ok = !offsets.is_empty()
            && offsets[0] == 0
            && offsets.windows(2).all(|w| w[0] <= w[1])
            && *offsets.last().unwrap() == entries.len();
        if !ok {
            return Err(Error::Data("corrupt adjacency offsets".into()));
        }
        Ok(Adjacency { offsets, entries })
    }

    #[inline]
    pub fn row(&self, target: usize) -> &[Incident] {
        &self.entries[self.offsets[target]..self.offsets[target + 1]]
    }

    pub fn num_targets(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn num_edges(&self) -> usize {
        self.entries.len()
    }

    pub(crate) fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub(crate) fn entries(&self) -> &[Incident] {
        &self.entries
    }
}

/// Row-major `rows x dim` feature block for one node type.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        FeatureMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub ty: String,
    pub id: usize,
    pub time: Option<i64>,
    /// 1-based source line, 0 when not from a file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeRecord {
    pub edge_type: String,
    pub src_type: String,
    pub src_id: usize,
    pub tgt_type: String,
    pub tgt_id: usize,
    pub time: i64,
    pub line: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    pub self_loops: bool,
}

/// Immutable heterogeneous graph.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub(crate) schema: Schema,
    pub(crate) counts: Vec<usize>,
    /// `Some` for event types: one timestamp per node.
    pub(crate) times: Vec<Option<Vec<i64>>>,
    pub(crate) features: Vec<FeatureMatrix>,
    /// Indexed by edge type.
    pub(crate) adjacency: Vec<Adjacency>,
}

impl HeteroGraph {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_nodes(&self, ty: NodeTypeId) -> usize {
        self.counts[ty.0]
    }

    pub fn total_nodes(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn num_edges(&self, edge: EdgeTypeId) -> usize {
        self.adjacency[edge.0].num_edges()
    }

    pub fn total_edges(&self) -> usize {
        self.adjacency.iter().map(Adjacency::num_edges).sum()
    }

    pub fn features(&self, ty: NodeTypeId) -> &FeatureMatrix {
        &self.features[ty.0]
    }

    pub fn adjacency(&self, edge: EdgeTypeId) -> &Adjacency {
        &self.adjacency[edge.0]
    }

    pub fn is_event(&self, ty: NodeTypeId) -> bool {
        self.times[ty.0].is_some()
    }

    /// Fixed timestamp of an event node; `None` for plain nodes.
    pub fn node_time(&self, node: NodeRef) -> Option<i64> {
        self.times[node.ty.0].as_ref().map(|t| t[node.id])
    }

    fn check_target(&self, target: NodeRef, rel: MetaRelation) -> Result<()> {
        self.schema.check_relation(rel)?;
        if target.ty != rel.tgt {
            return Err(Error::TypeMismatch {
                expected: self.schema.node_name(rel.tgt).to_string(),
                got: self.schema.node_name(target.ty).to_string(),
            });
        }
        if target.id >= self.counts[target.ty.0] {
            return Err(Error::Data(format!(
                "node {}:{} does not exist",
                self.schema.node_name(target.ty),
                target.id
            )));
        }
        Ok(())
    }

    /// Incoming edges of `target` under `rel`, in insertion order.
    pub fn neighbors(&self, target: NodeRef, rel: MetaRelation) -> Result<&[Incident]> {
        self.check_target(target, rel)?;
        Ok(self.adjacency[rel.edge.0].row(target.id))
    }

    pub fn relation_degree(&self, target: NodeRef, rel: MetaRelation) -> Result<usize> {
        self.neighbors(target, rel).map(<[Incident]>::len)
    }

    /// Unchecked row access for hot loops.
    #[inline]
    pub fn incident(&self, edge: EdgeTypeId, target: usize) -> &[Incident] {
        self.adjacency[edge.0].row(target)
    }

    /// Adds the per-type self-loop edge types and one loop per node. A loop is
    /// stamped with the node's own time (0 for plain nodes); samplers restamp
    /// loops with the target's assigned time.
    pub fn with_self_loops(mut self) -> Self {
        if self.schema.has_self_loops() {
            return self;
        }
        self.schema = self.schema.with_self_loops();
        for i in self.adjacency.len()..self.schema.num_edge_types() {
            let ty = self.schema.edge_def(EdgeTypeId(i)).tgt;
            let n = self.counts[ty.0];
            let pairs: Vec<_> = (0..n)
                .map(|v| {
                    let time = self.times[ty.0].as_ref().map_or(0, |t| t[v]);
                    (v, Incident { src: v, time })
                })
                .collect();
            self.adjacency.push(Adjacency::from_pairs(n, &pairs));
        }
        self
    }

    /// Checks the mirror invariant by exhaustive scan: every `(s -> t, φ, T)`
    /// has a matching `(t -> s, φ⁻¹, T)`, with equal multiplicity.
    pub fn mirror_complete(&self) -> bool {
        use std::collections::HashMap;
        let mut balance: HashMap<(usize, usize, usize, i64), i64> = HashMap::new();
        for (e, adj) in self.adjacency.iter().enumerate() {
            let def = self.schema.edge_def(EdgeTypeId(e));
            for t in 0..adj.num_targets() {
                for inc in adj.row(t) {
                    // canonical key: forward edge type, forward src, forward tgt
                    let (fe, fs, ft) = if def.origin == EdgeOrigin::Reverse {
                        (def.inverse.0, t, inc.src)
                    } else {
                        (e, inc.src, t)
                    };
                    let sign = if def.origin == EdgeOrigin::Reverse { -1 } else { 1 };
                    if def.symmetric {
                        if inc.src == t {
                            continue;
                        }
                        let (a, b) = (fs.min(ft), fs.max(ft));
                        let s = if fs < ft { 1 } else { -1 };
                        *balance.entry((fe, a, b, inc.time)).or_default() += s;
                    } else {
                        *balance.entry((fe, fs, ft, inc.time)).or_default() += sign;
                    }
                }
            }
        }
        balance.values().all(|&v| v == 0)
    }
}

/// Incremental graph construction with record-level validation.
pub struct GraphBuilder {
    schema: Schema,
    seen: Vec<Vec<Option<usize>>>,
    times: Vec<Vec<Option<i64>>>,
    features: Vec<Option<FeatureMatrix>>,
    edges: Vec<Vec<(usize, Incident)>>,
}

impl GraphBuilder {
    pub fn new(schema: Schema) -> Self {
        let nt = schema.num_node_types();
        let et = schema.num_edge_types();
        GraphBuilder {
            schema,
            seen: vec![Vec::new(); nt],
            times: vec![Vec::new(); nt],
            features: vec![None; nt],
            edges: vec![Vec::new(); et],
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    fn node_type(&self, name: &str, line: usize) -> Result<NodeTypeId> {
        self.schema.node_type(name).ok_or_else(|| Error::UnknownType {
            line,
            name: name.to_string(),
        })
    }

    pub fn add_node(&mut self, rec: &NodeRecord) -> Result<NodeRef> {
        let ty = self.node_type(&rec.ty, rec.line)?;
        let def = self.schema.node_def(ty);
        match (def.is_event, rec.time) {
            (true, None) => {
                return Err(Error::BadRecord {
                    line: rec.line,
                    msg: format!("event node {}:{} needs a timestamp", rec.ty, rec.id),
                })
            }
            (false, Some(_)) => {
                return Err(Error::BadRecord {
                    line: rec.line,
                    msg: format!("plain node {}:{} must not carry a timestamp", rec.ty, rec.id),
                })
            }
            _ => {}
        }
        let seen = &mut self.seen[ty.0];
        if seen.len() <= rec.id {
            seen.resize(rec.id + 1, None);
            self.times[ty.0].resize(rec.id + 1, None);
        }
        if seen[rec.id].is_some() {
            return Err(Error::DuplicateNodeId {
                line: rec.line,
                ty: rec.ty.clone(),
                id: rec.id,
            });
        }
        seen[rec.id] = Some(rec.line);
        self.times[ty.0][rec.id] = rec.time;
        Ok(NodeRef { ty, id: rec.id })
    }

    fn exists(&self, ty: NodeTypeId, id: usize) -> bool {
        self.seen[ty.0].get(id).is_some_and(Option::is_some)
    }

    /// Adds an edge and its mirror under the inverse type.
    pub fn add_edge(&mut self, rec: &EdgeRecord) -> Result<()> {
        let edge = self.schema.edge_type(&rec.edge_type).ok_or_else(|| Error::UnknownType {
            line: rec.line,
            name: rec.edge_type.clone(),
        })?;
        let src_ty = self.node_type(&rec.src_type, rec.line)?;
        let tgt_ty = self.node_type(&rec.tgt_type, rec.line)?;
        let def = self.schema.edge_def(edge);
        if def.origin == EdgeOrigin::SelfLoop {
            return Err(Error::BadRecord {
                line: rec.line,
                msg: format!("self-loop type `{}` is generated, not ingested", rec.edge_type),
            });
        }
        if def.src != src_ty || def.tgt != tgt_ty {
            return Err(Error::BadRecord {
                line: rec.line,
                msg: format!(
                    "edge type `{}` connects {} -> {}, record has {} -> {}",
                    rec.edge_type,
                    self.schema.node_name(def.src),
                    self.schema.node_name(def.tgt),
                    rec.src_type,
                    rec.tgt_type
                ),
            });
        }
        for (ty, id, name) in [(src_ty, rec.src_id, &rec.src_type), (tgt_ty, rec.tgt_id, &rec.tgt_type)] {
            if !self.exists(ty, id) {
                return Err(Error::DanglingEdge {
                    line: rec.line,
                    ty: name.clone(),
                    id,
                });
            }
        }
        let inv = def.inverse;
        self.edges[edge.0].push((rec.tgt_id, Incident { src: rec.src_id, time: rec.time }));
        // a symmetric loop is its own mirror
        if !(inv == edge && rec.src_id == rec.tgt_id) {
            self.edges[inv.0].push((rec.src_id, Incident { src: rec.tgt_id, time: rec.time }));
        }
        Ok(())
    }

    pub fn set_features(&mut self, ty: NodeTypeId, features: FeatureMatrix) -> Result<()> {
        let dim = self.schema.node_def(ty).feature_dim;
        if features.dim != dim || features.data.len() != features.rows * features.dim {
            return Err(Error::Features {
                ty: self.schema.node_name(ty).to_string(),
                msg: format!("expected dim {dim}, got {} ({} values)", features.dim, features.data.len()),
            });
        }
        self.features[ty.0] = Some(features);
        Ok(())
    }

    /// Finalizes the graph. Node ids must be dense per type; types without
    /// explicit features get zero rows.
    pub fn build(self, opts: BuildOptions) -> Result<HeteroGraph> {
        let nt = self.schema.num_node_types();
        let mut counts = Vec::with_capacity(nt);
        let mut times = Vec::with_capacity(nt);
        let mut features = Vec::with_capacity(nt);
        for t in 0..nt {
            let ty = NodeTypeId(t);
            let name = self.schema.node_name(ty);
            if let Some(missing) = self.seen[t].iter().position(Option::is_none) {
                return Err(Error::Data(format!("node type `{name}`: local id {missing} missing (ids must be dense)")));
            }
            let n = self.seen[t].len();
            counts.push(n);
            if self.schema.node_def(ty).is_event {
                times.push(Some(self.times[t].iter().map(|x| x.unwrap_or(0)).collect()));
            } else {
                times.push(None);
            }
            let dim = self.schema.node_def(ty).feature_dim;
            let f = match &self.features[t] {
                Some(f) if f.rows != n => {
                    return Err(Error::Features {
                        ty: name.to_string(),
                        msg: format!("{} feature rows for {n} nodes", f.rows),
                    })
                }
                Some(f) => f.clone(),
                None => FeatureMatrix::zeros(n, dim),
            };
            features.push(f);
        }
        let adjacency = self
            .edges
            .iter()
            .enumerate()
            .map(|(e, pairs)| {
                let tgt = self.schema.edge_def(EdgeTypeId(e)).tgt;
                Adjacency::from_pairs(counts[tgt.0], pairs)
            })
            .collect();
        let graph = HeteroGraph {
            schema: self.schema,
            counts,
            times,
            features,
            adjacency,
        };
        Ok(if opts.self_loops { graph.with_self_loops() } else { graph })
    }
}

/// Builds a graph from record streams. Edge records must follow all nodes
/// they reference.
pub fn build_graph<N, E>(schema: Schema, nodes: N, edges: E, opts: BuildOptions) -> Result<HeteroGraph>
where
    N: IntoIterator<Item = NodeRecord>,
    E: IntoIterator<Item = EdgeRecord>,
{
    let mut b = GraphBuilder::new(schema);
    for n in nodes {
        b.add_node(&n)?;
    }
    for e in edges {
        b.add_edge(&e)?;
    }
    b.build(opts)
}
