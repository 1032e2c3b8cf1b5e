//! Single-vector forms of each HGT step. They read the same parameters as
//! the batched forward and serve as its oracle.

use super::Hgt;
use crate::error::{Error, Result};
use crate::hetgraph::{MetaRelation, NodeTypeId};
use crate::sampler::SampledSubgraph;
use crate::tensor::{ParamStore, Tensor};

/// Sinusoid basis: even index `2i` is `sin(dt / 10000^(2i/d))`, odd index
/// `2i+1` is `cos(dt / 10000^((2i+1)/d))`.
pub fn rte_base(dt: i64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let x = dt as f64 / 10000f64.powf(j as f64 / d as f64);
            if j % 2 == 0 {
                x.sin()
            } else {
                x.cos()
            }
        })
        .collect()
}

fn param<'a>(store: &'a ParamStore, name: &str) -> Result<&'a Tensor> {
    store
        .get(name)
        .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
}

/// `x W + b` for a row vector.
fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    if x.len() != rows {
        return Err(Error::ShapeMismatch(format!("vector of {} into a {rows}x{cols} map", x.len())));
    }
    let wd = w.data();
    let mut out = b.data().to_vec();
    for (i, xi) in x.iter().enumerate() {
        for j in 0..cols {
            out[j] += xi * wd[i * cols + j];
        }
    }
    Ok(out)
}

/// Row vector of head `i` times block `i`, for every head.
fn blocks(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (h, k) = (w.shape()[0], w.shape()[1]);
    let wd = w.data();
    let mut out = vec![0.0; h * k];
    for i in 0..h {
        for a in 0..k {
            for b in 0..k {
                out[i * k + b] += x[i * k + a] * wd[i * k * k + a * k + b];
            }
        }
    }
    out
}

impl Hgt {
    fn check_rel(&self, rel: MetaRelation) -> Result<()> {
        self.schema().check_relation(rel)
    }

    fn affine_of(&self, store: &ParamStore, layer: usize, kind: &str, ty: NodeTypeId, x: &[f64]) -> Result<Vec<f64>> {
        let (w, b) = self.lin_name(layer, kind, ty);
        affine(x, param(store, &w)?, param(store, &b)?)
    }

    /// T-Linear of the sinusoid basis; zero when RTE is disabled.
    pub fn rte_encode(&self, store: &ParamStore, layer: usize, dt: i64) -> Result<Vec<f64>> {
        let d = self.config().hidden;
        if !self.config().use_rte {
            return Ok(vec![0.0; d]);
        }
        let (w, b) = self.rte_name(layer);
        affine(&rte_base(dt, d), param(store, &w)?, param(store, &b)?)
    }

    /// Source representation plus the encoding of `t_tgt - t_src`.
    pub fn apply_rte(&self, store: &ParamStore, layer: usize, h_src: &[f64], t_tgt: i64, t_src: i64) -> Result<Vec<f64>> {
        if !self.config().use_rte {
            return Ok(h_src.to_vec());
        }
        let r = self.rte_encode(store, layer, t_tgt - t_src)?;
        Ok(h_src.iter().zip(&r).map(|(a, b)| a + b).collect())
    }

    /// Pre-softmax attention of each head for one edge.
    pub fn att_head_scores(
        &self,
        store: &ParamStore,
        layer: usize,
        s_aug: &[f64],
        t_repr: &[f64],
        rel: MetaRelation,
    ) -> Result<Vec<f64>> {
        self.check_rel(rel)?;
        let h = self.config().heads;
        let k = self.config().head_dim();
        let key = self.affine_of(store, layer, "k", rel.src, s_aug)?;
        let qry = self.affine_of(store, layer, "q", rel.tgt, t_repr)?;
        let katt = blocks(&key, param(store, &self.att_name(layer, rel.edge))?);
        let mu = param(store, &self.mu_name(layer, rel.edge))?.data()[0];
        let scale = mu / (self.config().hidden as f64).sqrt();
        Ok((0..h)
            .map(|i| (0..k).map(|j| katt[i * k + j] * qry[i * k + j]).sum::<f64>() * scale)
            .collect())
    }

    /// Softmax per head across all neighbors of one target, pooled over
    /// relations. Returns one row per neighbor.
    pub fn hetero_attention(scores: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let first = scores.first().ok_or(Error::NoNeighbors)?;
        let h = first.len();
        let mut out = vec![vec![0.0; h]; scores.len()];
        for c in 0..h {
            let m = scores.iter().map(|s| s[c]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s[c] - m).exp()).sum();
            for (o, s) in out.iter_mut().zip(scores) {
                o[c] = (s[c] - m).exp() / z;
            }
        }
        Ok(out)
    }

    /// Multi-head message of one source along `rel`.
    pub fn message(&self, store: &ParamStore, layer: usize, s_aug: &[f64], rel: MetaRelation) -> Result<Vec<f64>> {
        self.check_rel(rel)?;
        let m = self.affine_of(store, layer, "m", rel.src, s_aug)?;
        Ok(blocks(&m, param(store, &self.msg_name(layer, rel.edge))?))
    }

    /// Attention-weighted message sum, activation, target-specific map,
    /// residual and (if configured) layer normalisation.
    pub fn aggregate(
        &self,
        store: &ParamStore,
        layer: usize,
        attn: &[Vec<f64>],
        messages: &[Vec<f64>],
        h_prev: &[f64],
        tgt: NodeTypeId,
    ) -> Result<Vec<f64>> {
        let d = self.config().hidden;
        let h = self.config().heads;
        let k = self.config().head_dim();
        if attn.len() != messages.len()
            || h_prev.len() != d
            || attn.iter().any(|a| a.len() != h)
            || messages.iter().any(|m| m.len() != d)
        {
            return Err(Error::ShapeMismatch("aggregate: inconsistent attention/message shapes".into()));
        }
        let mut agg = vec![0.0; d];
        for (a, m) in attn.iter().zip(messages) {
            for i in 0..h {
                for j in i * k..(i + 1) * k {
                    agg[j] += a[i] * m[j];
                }
            }
        }
        let act: Vec<f64> = agg.iter().map(|&v| self.config().activation.apply(v)).collect();
        let out = self.affine_of(store, layer, "a", tgt, &act)?;
        let sum: Vec<f64> = out.iter().zip(h_prev).map(|(a, b)| a + b).collect();
        if !self.config().layer_norm {
            return Ok(sum);
        }
        let mean = sum.iter().sum::<f64>() / d as f64;
        let var = sum.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        Ok(sum.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect())
    }

    /// One layer over a whole subgraph, one target at a time.
    /// `h_prev[type][row]` is the previous representation of each entry.
    pub fn reference_layer(
        &self,
        store: &ParamStore,
        layer: usize,
        sg: &SampledSubgraph,
        h_prev: &[Vec<Vec<f64>>],
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        let schema = self.schema();
        let mut out = h_prev.to_vec();
        for (t, list) in sg.nodes.iter().enumerate() {
            let ty = NodeTypeId(t);
            for (j, &(_, t_time)) in list.iter().enumerate() {
                let mut scores = Vec::new();
                let mut msgs = Vec::new();
                for rel in schema.relations_into(ty) {
                    let Some(edges) = sg.edges.get(rel.edge.0) else { continue };
                    for se in edges.iter().filter(|se| se.tgt == j) {
                        let s_time = sg.nodes[rel.src.0][se.src].1;
                        let s_aug = self.apply_rte(store, layer, &h_prev[rel.src.0][se.src], t_time, s_time)?;
                        scores.push(self.att_head_scores(store, layer, &s_aug, &h_prev[t][j], rel)?);
                        msgs.push(self.message(store, layer, &s_aug, rel)?);
                    }
                }
                if scores.is_empty() {
                    continue;
                }
                let attn = Self::hetero_attention(&scores)?;
                out[t][j] = self.aggregate(store, layer, &attn, &msgs, &h_prev[t][j], ty)?;
            }
        }
        Ok(out)
    }
}
