//! The heterogeneous graph transformer layer stack.

mod forward;
mod reference;

pub use forward::{gather_features, AttentionRecord, Forward};
pub use reference::rte_base;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{EdgeTypeId, NodeTypeId, Schema};
use crate::tensor::{Activation, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HgtConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Separate weights per node type, edge type and meta relation. When
    /// off, every type shares one set.
    pub use_heter: bool,
    pub use_rte: bool,
    pub activation: Activation,
    pub self_loops: bool,
    /// Dropout on the aggregated messages during training.
    pub dropout: f64,
    /// Parameter-free layer normalisation after the residual sum of every
    /// target with at least one neighbor.
    pub layer_norm: bool,
}

impl Default for HgtConfig {
    fn default() -> Self {
        HgtConfig {
            hidden: 256,
            heads: 8,
            layers: 3,
            use_heter: true,
            use_rte: true,
            activation: Activation::Gelu,
            self_loops: false,
            dropout: 0.0,
            layer_norm: false,
        }
    }
}

impl HgtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden dim {} must be a positive multiple of the head count {}",
                self.hidden, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// How a parameter is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Glorot uniform with the given fans.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub(crate) fn new(name: String, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let n = self.numel();
        let data = match self.init {
            Init::Glorot { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..=a)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        Tensor::new(&self.shape, data).expect("spec shape")
    }
}

pub(crate) fn init_params<R: Rng + ?Sized>(specs: &[ParamSpec], store: &mut ParamStore, rng: &mut R) -> Result<()> {
    for s in specs {
        store.insert(s.name.clone(), s.sample(rng))?;
    }
    Ok(())
}

const SHARED: &str = "shared";

/// Per-layer parameter count in closed form, from the type counts alone.
/// With `use_heter` off the type counts collapse to one.
pub fn closed_form_layer_params(
    node_types: usize,
    edge_types: usize,
    meta_relations: usize,
    d: usize,
    h: usize,
    use_heter: bool,
    use_rte: bool,
) -> usize {
    let (a, r, m) = if use_heter {
        (node_types, edge_types, meta_relations)
    } else {
        (1, 1, 1)
    };
    let lin = d * d + d;
    let dk = d / h;
    a * 3 * lin + a * lin + r * 2 * h * dk * dk + m + if use_rte { lin } else { 0 }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub node_types: usize,
    pub edge_types: usize,
    pub meta_relations: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub use_heter: bool,
    pub use_rte: bool,
    /// Closed form for one layer.
    pub formula_per_layer: usize,
    /// Counted from the parameter specs of layer 0.
    pub enumerated_per_layer: usize,
    pub layer_total: usize,
    /// Input adaptation maps; outside the per-layer formula.
    pub adapter_params: usize,
    pub total: usize,
}

/// The HGT stack bound to a schema. Holds no weights itself; parameters live
/// in a [`ParamStore`] under names produced by [`Hgt::param_specs`].
#[derive(Debug, Clone)]
pub struct Hgt {
    cfg: HgtConfig,
    schema: Schema,
}

impl Hgt {
    /// Adds self-loop edge types to `schema` when the config asks for them.
    pub fn new(schema: &Schema, cfg: HgtConfig) -> Result<Self> {
        cfg.validate()?;
        let schema = if cfg.self_loops {
            schema.clone().with_self_loops()
        } else {
            schema.clone()
        };
        Ok(Hgt { cfg, schema })
    }

    pub fn config(&self) -> &HgtConfig {
        &self.cfg
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    fn type_key(&self, ty: NodeTypeId) -> &str {
        if self.cfg.use_heter {
            self.schema.node_name(ty)
        } else {
            SHARED
        }
    }

    fn edge_key(&self, e: EdgeTypeId) -> &str {
        if self.cfg.use_heter {
            self.schema.edge_name(e)
        } else {
            SHARED
        }
    }

    pub(crate) fn lin_name(&self, layer: usize, kind: &str, ty: NodeTypeId) -> (String, String) {
        let base = format!("hgt.l{layer}.{kind}.{}", self.type_key(ty));
        (format!("{base}.w"), format!("{base}.b"))
    }

    pub(crate) fn att_name(&self, layer: usize, e: EdgeTypeId) -> String {
        format!("hgt.l{layer}.att.{}", self.edge_key(e))
    }

    pub(crate) fn msg_name(&self, layer: usize, e: EdgeTypeId) -> String {
        format!("hgt.l{layer}.msg.{}", self.edge_key(e))
    }

    pub(crate) fn mu_name(&self, layer: usize, e: EdgeTypeId) -> String {
        format!("hgt.l{layer}.mu.{}", self.edge_key(e))
    }

    pub(crate) fn rte_name(&self, layer: usize) -> (String, String) {
        (format!("hgt.l{layer}.rte.w"), format!("hgt.l{layer}.rte.b"))
    }

    pub(crate) fn adapter_name(&self, ty: NodeTypeId) -> (String, String) {
        let base = format!("hgt.adapt.{}", self.schema.node_name(ty));
        (format!("{base}.w"), format!("{base}.b"))
    }

    pub fn adapter_specs(&self) -> Vec<ParamSpec> {
        let d = self.cfg.hidden;
        let mut out = Vec::new();
        for (i, def) in self.schema.node_types().iter().enumerate() {
            let (w, b) = self.adapter_name(NodeTypeId(i));
            let f = def.feature_dim;
            out.push(ParamSpec::new(w, &[f, d], Init::Glorot { fan_in: f, fan_out: d }));
            out.push(ParamSpec::new(b, &[d], Init::Zeros));
        }
        out
    }

    pub fn layer_specs(&self, layer: usize) -> Vec<ParamSpec> {
        let d = self.cfg.hidden;
        let h = self.cfg.heads;
        let dk = self.cfg.head_dim();
        let mut out: Vec<ParamSpec> = Vec::new();
        let mut push = |s: ParamSpec| {
            if !out.iter().any(|o| o.name == s.name) {
                out.push(s);
            }
        };
        let glorot = Init::Glorot { fan_in: d, fan_out: d };
        for kind in ["k", "q", "m", "a"] {
            for i in 0..self.schema.num_node_types() {
                let (w, b) = self.lin_name(layer, kind, NodeTypeId(i));
                push(ParamSpec::new(w, &[d, d], glorot));
                push(ParamSpec::new(b, &[d], Init::Zeros));
            }
        }
        let block = Init::Glorot { fan_in: dk, fan_out: dk };
        for e in 0..self.schema.num_edge_types() {
            let e = EdgeTypeId(e);
            push(ParamSpec::new(self.att_name(layer, e), &[h, dk, dk], block));
            push(ParamSpec::new(self.msg_name(layer, e), &[h, dk, dk], block));
            push(ParamSpec::new(self.mu_name(layer, e), &[1], Init::Ones));
        }
        if self.cfg.use_rte {
            let (w, b) = self.rte_name(layer);
            push(ParamSpec::new(w, &[d, d], glorot));
            push(ParamSpec::new(b, &[d], Init::Zeros));
        }
        out
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = self.adapter_specs();
        for l in 0..self.cfg.layers {
            out.extend(self.layer_specs(l));
        }
        out
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        init_params(&self.param_specs(), store, rng)
    }

    pub fn param_count(&self) -> ParamCount {
        let s = &self.schema;
        let formula = closed_form_layer_params(
            s.num_node_types(),
            s.num_edge_types(),
            s.meta_relations().len(),
            self.cfg.hidden,
            self.cfg.heads,
            self.cfg.use_heter,
            self.cfg.use_rte,
        );
        let enumerated: usize = self.layer_specs(0).iter().map(ParamSpec::numel).sum();
        let adapters: usize = self.adapter_specs().iter().map(ParamSpec::numel).sum();
        let layer_total: usize = (0..self.cfg.layers)
            .map(|l| self.layer_specs(l).iter().map(ParamSpec::numel).sum::<usize>())
            .sum();
        ParamCount {
            node_types: s.num_node_types(),
            edge_types: s.num_edge_types(),
            meta_relations: s.meta_relations().len(),
            hidden: self.cfg.hidden,
            heads: self.cfg.heads,
            layers: self.cfg.layers,
            use_heter: self.cfg.use_heter,
            use_rte: self.cfg.use_rte,
            formula_per_layer: formula,
            enumerated_per_layer: enumerated,
            layer_total,
            adapter_params: adapters,
            total: layer_total + adapters,
        }
    }
}


#[cfg(test)]
mod count_tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::hetgraph::{EdgeTypeDecl, NodeTypeDef, SchemaFile};

    pub(crate) fn schema(types: usize, declared_edges: usize) -> Schema {
        let node_types = (0..types)
            .map(|i| NodeTypeDef {
                name: format!("t{i}"),
                feature_dim: 3 + i,
                is_event: i == 0,
            })
            .collect();
        let edge_types = (0..declared_edges)
            .map(|j| EdgeTypeDecl {
                name: format!("e{j}"),
                src: format!("t{}", j % types),
                tgt: format!("t{}", (j / types + j + 1) % types),
                symmetric: false,
                inverse: None,
            })
            .collect();
        Schema::from_decl(&SchemaFile { node_types, edge_types }).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(HgtConfig::default().validate().is_ok());
        let bad = HgtConfig { hidden: 10, heads: 3, ..HgtConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = HgtConfig { layers: 0, ..HgtConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn enumeration_matches_closed_form() {
        for (a, e) in [(2, 1), (3, 4), (5, 16)] {
            for heter in [true, false] {
                for rte in [true, false] {
                    let cfg = HgtConfig { hidden: 16, heads: 4, use_heter: heter, use_rte: rte, ..HgtConfig::default() };
                    let c = Hgt::new(&schema(a, e), cfg).unwrap().param_count();
                    assert_eq!(c.formula_per_layer, c.enumerated_per_layer, "a={a} e={e} heter={heter} rte={rte}");
                    assert_eq!(c.layer_total, 3 * c.formula_per_layer);
                }
            }
        }
    }

    #[test]
    fn shared_weights_are_strictly_fewer() {
        let s = schema(3, 3);
        let full = Hgt::new(&s, HgtConfig { hidden: 16, heads: 4, ..HgtConfig::default() }).unwrap();
        let shared = Hgt::new(&s, HgtConfig { hidden: 16, heads: 4, use_heter: false, ..HgtConfig::default() }).unwrap();
        assert!(shared.param_count().layer_total < full.param_count().layer_total);
    }

    #[test]
    fn init_follows_specs() {
        let h = Hgt::new(&schema(2, 1), HgtConfig { hidden: 8, heads: 2, layers: 1, ..HgtConfig::default() }).unwrap();
        let mut store = ParamStore::new();
        h.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(store.num_scalars(), h.param_count().total);
        assert_eq!(store.get("hgt.l0.mu.e0").unwrap().data(), &[1.0]);
        assert!(store.get("hgt.l0.k.t0.b").unwrap().data().iter().all(|&v| v == 0.0));
        let w = store.get("hgt.l0.k.t0.w").unwrap();
        let a = (6.0f64 / 16.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= a));
        assert!(w.data().iter().any(|&v| v != 0.0));
        let blk = store.get("hgt.l0.att.e0").unwrap();
        assert_eq!(blk.shape(), &[2, 4, 4]);
    }
}
