use std::collections::HashMap;

use rand::RngCore;

use super::reference::rte_base;
use super::Hgt;
use crate::error::{Error, Result};
use crate::hetgraph::{EdgeTypeId, HeteroGraph, NodeTypeId};
use crate::sampler::SampledSubgraph;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Attention weights of one layer for all edges into one target type. Rows
/// follow `parts`: the edges of each listed edge type, in subgraph order.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub layer: usize,
    pub target_type: NodeTypeId,
    pub parts: Vec<(EdgeTypeId, usize)>,
    /// `[edges x heads]`.
    pub attn: Var,
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// Final representation per node type; `None` for types absent from the
    /// subgraph.
    pub h: Vec<Option<Var>>,
    pub attention: Vec<AttentionRecord>,
}

/// Raw input features of the sampled entries, one `[n_type x f_type]`
/// matrix per node type.
pub fn gather_features(graph: &HeteroGraph, sg: &SampledSubgraph) -> Vec<Tensor> {
    sg.nodes
        .iter()
        .enumerate()
        .map(|(t, list)| {
            let fm = graph.features(NodeTypeId(t));
            let mut data = Vec::with_capacity(list.len() * fm.dim);
            for &(id, _) in list {
                data.extend(fm.row(id).iter().map(|&v| f64::from(v)));
            }
            Tensor::new(&[list.len(), fm.dim], data).expect("feature rows")
        })
        .collect()
}

/// Index lists for every edge type plus the distinct time gaps seen from
/// each source type.
struct EdgePlan {
    src: Vec<Vec<usize>>,
    tgt: Vec<Vec<usize>>,
    gap: Vec<Vec<usize>>,
    gaps: Vec<Vec<i64>>,
}

impl EdgePlan {
    fn new(hgt: &Hgt, sg: &SampledSubgraph) -> Self {
        let schema = hgt.schema();
        let mut plan = EdgePlan {
            src: Vec::new(),
            tgt: Vec::new(),
            gap: Vec::new(),
            gaps: vec![Vec::new(); schema.num_node_types()],
        };
        let mut seen: Vec<HashMap<i64, usize>> = vec![HashMap::new(); schema.num_node_types()];
        for (e, list) in sg.edges.iter().enumerate() {
            let def = schema.edge_def(EdgeTypeId(e));
            let (s, t) = (def.src.0, def.tgt.0);
            let mut gi = Vec::with_capacity(list.len());
            for se in list {
                let dt = sg.nodes[t][se.tgt].1 - sg.nodes[s][se.src].1;
                let next = plan.gaps[s].len();
                let i = *seen[s].entry(dt).or_insert(next);
                if i == next {
                    plan.gaps[s].push(dt);
                }
                gi.push(i);
            }
            plan.src.push(list.iter().map(|se| se.src).collect());
            plan.tgt.push(list.iter().map(|se| se.tgt).collect());
            plan.gap.push(gi);
        }
        plan
    }
}

impl Hgt {
    /// Per-type linear maps from raw features into the hidden space.
    pub fn adapt_input(&self, tape: &mut Tape, store: &ParamStore, features: &[Tensor]) -> Result<Vec<Option<Var>>> {
        let schema = self.schema();
        if features.len() != schema.num_node_types() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature matrices for {} node types",
                features.len(),
                schema.num_node_types()
            )));
        }
        let mut out = Vec::with_capacity(features.len());
        for (t, x) in features.iter().enumerate() {
            let ty = NodeTypeId(t);
            let f = schema.node_def(ty).feature_dim;
            if x.shape().len() != 2 || x.shape()[1] != f {
                return Err(Error::ShapeMismatch(format!(
                    "features of `{}` have shape {:?}, expected width {f}",
                    schema.node_name(ty),
                    x.shape()
                )));
            }
            if x.rows() == 0 {
                out.push(None);
                continue;
            }
            let (w, b) = self.adapter_name(ty);
            let xv = tape.leaf(x.clone());
            let (w, b) = (tape.param(store, &w)?, tape.param(store, &b)?);
            out.push(Some(tape.linear(xv, w, b)?));
        }
        Ok(out)
    }

    /// Adapters followed by the full layer stack. Dropout is applied only
    /// when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sg: &SampledSubgraph,
        features: &[Tensor],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Forward> {
        let h0 = self.adapt_input(tape, store, features)?;
        self.forward_layers(tape, store, sg, h0, rng)
    }

    /// Runs every layer starting from `h0`, whose rows must align with the
    /// subgraph's entries.
    pub fn forward_layers(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sg: &SampledSubgraph,
        h0: Vec<Option<Var>>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Forward> {
        let schema = self.schema();
        let d = self.config().hidden;
        if h0.len() != schema.num_node_types() || sg.nodes.len() != schema.num_node_types() {
            return Err(Error::ShapeMismatch("input types do not match the schema".into()));
        }
        if sg.edges.len() > schema.num_edge_types() {
            return Err(Error::ShapeMismatch("subgraph has more edge types than the schema".into()));
        }
        for (t, h) in h0.iter().enumerate() {
            let n = sg.nodes[t].len();
            match h {
                Some(v) => {
                    let shape = tape.value(*v).shape();
                    if shape != [n, d] {
                        return Err(Error::ShapeMismatch(format!(
                            "representation of `{}` has shape {shape:?}, expected [{n}, {d}]",
                            schema.node_name(NodeTypeId(t))
                        )));
                    }
                }
                None if n > 0 => {
                    return Err(Error::ShapeMismatch(format!(
                        "missing representation for `{}`",
                        schema.node_name(NodeTypeId(t))
                    )))
                }
                None => {}
            }
        }

        let plan = EdgePlan::new(self, sg);
        // Base sinusoids per source type; the cache lives for this call only.
        let bases: Vec<Option<Var>> = plan
            .gaps
            .iter()
            .map(|g| {
                (self.config().use_rte && !g.is_empty()).then(|| {
                    let data = g.iter().flat_map(|&dt| rte_base(dt, d)).collect();
                    tape.leaf(Tensor::new(&[g.len(), d], data).expect("base table"))
                })
            })
            .collect();

        let mut h = h0;
        let mut attention = Vec::new();
        for l in 0..self.config().layers {
            let (next, att) = self.layer(tape, store, sg, &plan, &bases, &h, l, rng.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
            h = next;
            attention.extend(att);
        }
        Ok(Forward { h, attention })
    }

    fn project(&self, tape: &mut Tape, store: &ParamStore, x: Var, layer: usize, kind: &str, ty: NodeTypeId) -> Result<Var> {
        let (w, b) = self.lin_name(layer, kind, ty);
        let (w, b) = (tape.param(store, &w)?, tape.param(store, &b)?);
        tape.linear(x, w, b)
    }

    #[allow(clippy::too_many_arguments)]
    fn layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sg: &SampledSubgraph,
        plan: &EdgePlan,
        bases: &[Option<Var>],
        h: &[Option<Var>],
        l: usize,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<Option<Var>>, Vec<AttentionRecord>)> {
        let schema = self.schema();
        let cfg = self.config();
        let nt = schema.num_node_types();
        let inv_sqrt_d = 1.0 / (cfg.hidden as f64).sqrt();
        let active = |e: usize| plan.src.get(e).is_some_and(|s| !s.is_empty());

        let mut is_src = vec![false; nt];
        let mut is_tgt = vec![false; nt];
        for e in (0..sg.edges.len()).filter(|&e| active(e)) {
            let def = schema.edge_def(EdgeTypeId(e));
            is_src[def.src.0] = true;
            is_tgt[def.tgt.0] = true;
        }

        // Node-level projections, then the time-gap corrections through the
        // same weights: K(H + R) = K(H) + R W_K.
        let mut key = vec![None; nt];
        let mut val = vec![None; nt];
        let mut qry = vec![None; nt];
        let mut key_gap = vec![None; nt];
        let mut val_gap = vec![None; nt];
        let rte = if cfg.use_rte {
            let (w, b) = self.rte_name(l);
            Some((tape.param(store, &w)?, tape.param(store, &b)?))
        } else {
            None
        };
        for t in 0..nt {
            let ty = NodeTypeId(t);
            let Some(ht) = h[t] else { continue };
            if is_src[t] {
                key[t] = Some(self.project(tape, store, ht, l, "k", ty)?);
                val[t] = Some(self.project(tape, store, ht, l, "m", ty)?);
                if let (Some((rw, rb)), Some(base)) = (rte, bases[t]) {
                    let r = tape.linear(base, rw, rb)?;
                    let (kw, _) = self.lin_name(l, "k", ty);
                    let (mw, _) = self.lin_name(l, "m", ty);
                    let (kw, mw) = (tape.param(store, &kw)?, tape.param(store, &mw)?);
                    key_gap[t] = Some(tape.matmul(r, kw)?);
                    val_gap[t] = Some(tape.matmul(r, mw)?);
                }
            }
            if is_tgt[t] {
                qry[t] = Some(self.project(tape, store, ht, l, "q", ty)?);
            }
        }

        let mut next = h.to_vec();
        let mut records = Vec::new();
        for t in (0..nt).filter(|&t| is_tgt[t]) {
            let ty = NodeTypeId(t);
            let n_t = sg.nodes[t].len();
            let mut slot = vec![usize::MAX; n_t];
            let mut rows = Vec::new();
            let mut seg = Vec::new();
            let mut scores = Vec::new();
            let mut msgs = Vec::new();
            let mut parts = Vec::new();
            for rel in schema.relations_into(ty) {
                let e = rel.edge.0;
                if !active(e) {
                    continue;
                }
                let s = rel.src.0;
                let w_att = tape.param(store, &self.att_name(l, rel.edge))?;
                let w_msg = tape.param(store, &self.msg_name(l, rel.edge))?;
                let mu = tape.param(store, &self.mu_name(l, rel.edge))?;
                // Row gathering commutes with the per-head maps, so they run on
                // whichever side has fewer rows: source nodes plus gaps, or edges.
                let (key_s, val_s) = (key[s].expect("source projected"), val[s].expect("source projected"));
                let per_node = sg.nodes[s].len() + plan.gaps[s].len() < plan.src[e].len();
                let (katt, msg) = if per_node {
                    let (ka, ma) = (tape.block_matmul(key_s, w_att)?, tape.block_matmul(val_s, w_msg)?);
                    let mut k = tape.gather_rows(ka, plan.src[e].clone())?;
                    let mut m = tape.gather_rows(ma, plan.src[e].clone())?;
                    if let (Some(kg), Some(mg)) = (key_gap[s], val_gap[s]) {
                        let (kga, mga) = (tape.block_matmul(kg, w_att)?, tape.block_matmul(mg, w_msg)?);
                        let kg = tape.gather_rows(kga, plan.gap[e].clone())?;
                        let mg = tape.gather_rows(mga, plan.gap[e].clone())?;
                        k = tape.add(k, kg)?;
                        m = tape.add(m, mg)?;
                    }
                    (k, m)
                } else {
                    let mut k = tape.gather_rows(key_s, plan.src[e].clone())?;
                    let mut m = tape.gather_rows(val_s, plan.src[e].clone())?;
                    if let (Some(kg), Some(mg)) = (key_gap[s], val_gap[s]) {
                        let kg = tape.gather_rows(kg, plan.gap[e].clone())?;
                        let mg = tape.gather_rows(mg, plan.gap[e].clone())?;
                        k = tape.add(k, kg)?;
                        m = tape.add(m, mg)?;
                    }
                    (tape.block_matmul(k, w_att)?, tape.block_matmul(m, w_msg)?)
                };
                let q = tape.gather_rows(qry[t].expect("target projected"), plan.tgt[e].clone())?;
                let sc = tape.head_dot(katt, q, cfg.heads)?;
                let sc = tape.scale_by_entry(sc, mu, 0)?;
                scores.push(tape.scale(sc, inv_sqrt_d)?);
                msgs.push(msg);
                for &j in &plan.tgt[e] {
                    if slot[j] == usize::MAX {
                        slot[j] = rows.len();
                        rows.push(j);
                    }
                    seg.push(slot[j]);
                }
                parts.push((rel.edge, plan.tgt[e].len()));
            }
            let scores = if scores.len() == 1 { scores[0] } else { tape.concat_rows(&scores)? };
            let msgs = if msgs.len() == 1 { msgs[0] } else { tape.concat_rows(&msgs)? };
            let n_active = rows.len();
            let attn = tape.segment_softmax(scores, seg.clone(), n_active)?;
            let weighted = tape.head_weight(attn, msgs)?;
            let agg = tape.scatter_add_rows(weighted, seg, n_active)?;
            let mut act = tape.activation(agg, cfg.activation)?;
            if let Some(r) = rng.as_mut() {
                act = tape.dropout(act, cfg.dropout, r)?;
            }
            let out = self.project(tape, store, act, l, "a", ty)?;
            let prev = h[t].expect("target present");
            let update = if cfg.layer_norm {
                // isolated rows keep their input; active rows become LN(prev + out)
                let g = tape.gather_rows(prev, rows.clone())?;
                let sum = tape.add(g, out)?;
                let normed = tape.layer_norm(sum)?;
                let neg = tape.scale(g, -1.0)?;
                let delta = tape.add(normed, neg)?;
                tape.scatter_add_rows(delta, rows, n_t)?
            } else {
                tape.scatter_add_rows(out, rows, n_t)?
            };
            next[t] = Some(tape.add(prev, update)?);
            records.push(AttentionRecord {
                layer: l,
                target_type: ty,
                parts,
                attn,
            });
        }
        Ok((next, records))
    }
}
