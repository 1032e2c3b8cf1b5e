use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Suffix given to automatically generated reverse edge types.
pub const REVERSE_SUFFIX: &str = "~rev";
/// Prefix of the per-node-type self-loop edge types.
pub const SELF_PREFIX: &str = "self~";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeTypeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeTypeId(pub usize);

impl fmt::Display for NodeTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node type #{}", self.0)
    }
}

impl fmt::Display for EdgeTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "edge type #{}", self.0)
    }
}

/// `<source type, edge type, target type>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MetaRelation {
    pub src: NodeTypeId,
    pub edge: EdgeTypeId,
    pub tgt: NodeTypeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTypeDef {
    pub name: String,
    pub feature_dim: usize,
    pub is_event: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOrigin {
    /// Declared in the schema file; edge records are serialized under it.
    Declared,
    /// Generated mirror of a declared, non-symmetric edge type.
    Reverse,
    /// Per-node-type self loop.
    SelfLoop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTypeDef {
    pub name: String,
    pub src: NodeTypeId,
    pub tgt: NodeTypeId,
    pub symmetric: bool,
    pub inverse: EdgeTypeId,
    pub origin: EdgeOrigin,
}

/// Resolved type tables. Identifiers are positions in the two vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    node_types: Vec<NodeTypeDef>,
    edge_types: Vec<EdgeTypeDef>,
}

/// On-disk `schema.json` layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub node_types: Vec<NodeTypeDef>,
    pub edge_types: Vec<EdgeTypeDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTypeDecl {
    pub name: String,
    pub src: String,
    pub tgt: String,
    #[serde(default)]
    pub symmetric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<String>,
}

impl Schema {
    /// Resolves a schema declaration, generating reverse edge types for every
    /// non-symmetric declared type.
    pub fn from_decl(decl: &SchemaFile) -> Result<Self> {
        let mut schema = Schema {
            node_types: Vec::with_capacity(decl.node_types.len()),
            edge_types: Vec::new(),
        };
        for nt in &decl.node_types {
            if nt.name.is_empty() {
                return Err(Error::Schema("empty node type name".into()));
            }
            if schema.node_type(&nt.name).is_some() {
                return Err(Error::Schema(format!("duplicate node type `{}`", nt.name)));
            }
            schema.node_types.push(nt.clone());
        }

        let declared: Vec<&str> = decl.edge_types.iter().map(|e| e.name.as_str()).collect();
        for et in &decl.edge_types {
            let lookup = |name: &str| {
                schema.node_type(name).ok_or_else(|| {
                    Error::Schema(format!("edge type `{}` references unknown node type `{name}`", et.name))
                })
            };
            let src = lookup(&et.src)?;
            let tgt = lookup(&et.tgt)?;
            if schema.edge_type(&et.name).is_some() {
                return Err(Error::Schema(format!("duplicate edge type `{}`", et.name)));
            }
            if et.name.starts_with(SELF_PREFIX) {
                return Err(Error::Schema(format!("`{SELF_PREFIX}` prefix is reserved: `{}`", et.name)));
            }
            let id = EdgeTypeId(schema.edge_types.len());
            if et.symmetric {
                if src != tgt {
                    return Err(Error::Schema(format!(
                        "symmetric edge type `{}` must connect one node type",
                        et.name
                    )));
                }
                schema.edge_types.push(EdgeTypeDef {
                    name: et.name.clone(),
                    src,
                    tgt,
                    symmetric: true,
                    inverse: id,
                    origin: EdgeOrigin::Declared,
                });
                continue;
            }
            let rev_name = et
                .inverse
                .clone()
                .unwrap_or_else(|| format!("{}{REVERSE_SUFFIX}", et.name));
            if declared.contains(&rev_name.as_str()) || schema.edge_type(&rev_name).is_some() {
                return Err(Error::Schema(format!(
                    "inverse name `{rev_name}` of `{}` collides with another edge type",
                    et.name
                )));
            }
            let rev = EdgeTypeId(id.0 + 1);
            schema.edge_types.push(EdgeTypeDef {
                name: et.name.clone(),
                src,
                tgt,
                symmetric: false,
                inverse: rev,
                origin: EdgeOrigin::Declared,
            });
            schema.edge_types.push(EdgeTypeDef {
                name: rev_name,
                src: tgt,
                tgt: src,
                symmetric: false,
                inverse: id,
                origin: EdgeOrigin::Reverse,
            });
        }
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let decl: SchemaFile = serde_json::from_str(&text)?;
        Self::from_decl(&decl)
    }

    /// The declaration this schema was resolved from (self loops excluded).
    pub fn to_decl(&self) -> SchemaFile {
        SchemaFile {
            node_types: self.node_types.clone(),
            edge_types: self
                .edge_types
                .iter()
                .filter(|e| e.origin == EdgeOrigin::Declared)
                .map(|e| {
                    let inverse = (!e.symmetric).then(|| self.edge_types[e.inverse.0].name.clone());
                    EdgeTypeDecl {
                        name: e.name.clone(),
                        src: self.node_types[e.src.0].name.clone(),
                        tgt: self.node_types[e.tgt.0].name.clone(),
                        symmetric: e.symmetric,
                        inverse,
                    }
                })
                .collect(),
        }
    }

    /// Adds one symmetric self-loop edge type per node type. Idempotent.
    pub fn with_self_loops(mut self) -> Self {
        if self.has_self_loops() {
            return self;
        }
        for (i, nt) in self.node_types.iter().enumerate() {
            let id = EdgeTypeId(self.edge_types.len());
            self.edge_types.push(EdgeTypeDef {
                name: format!("{SELF_PREFIX}{}", nt.name),
                src: NodeTypeId(i),
                tgt: NodeTypeId(i),
                symmetric: true,
                inverse: id,
                origin: EdgeOrigin::SelfLoop,
            });
        }
        self
    }

    pub fn has_self_loops(&self) -> bool {
        self.edge_types.iter().any(|e| e.origin == EdgeOrigin::SelfLoop)
    }

    pub fn num_node_types(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_edge_types(&self) -> usize {
        self.edge_types.len()
    }

    pub fn node_types(&self) -> &[NodeTypeDef] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[EdgeTypeDef] {
        &self.edge_types
    }

    pub fn node_type(&self, name: &str) -> Option<NodeTypeId> {
        self.node_types.iter().position(|t| t.name == name).map(NodeTypeId)
    }

    pub fn edge_type(&self, name: &str) -> Option<EdgeTypeId> {
        self.edge_types.iter().position(|t| t.name == name).map(EdgeTypeId)
    }

    pub fn node_def(&self, id: NodeTypeId) -> &NodeTypeDef {
        &self.node_types[id.0]
    }

    pub fn edge_def(&self, id: EdgeTypeId) -> &EdgeTypeDef {
        &self.edge_types[id.0]
    }

    pub fn node_name(&self, id: NodeTypeId) -> &str {
        &self.node_types[id.0].name
    }

    pub fn edge_name(&self, id: EdgeTypeId) -> &str {
        &self.edge_types[id.0].name
    }

    pub fn inverse(&self, id: EdgeTypeId) -> EdgeTypeId {
        self.edge_types[id.0].inverse
    }

    pub fn meta_relation(&self, edge: EdgeTypeId) -> MetaRelation {
        let def = &self.edge_types[edge.0];
        MetaRelation {
            src: def.src,
            edge,
            tgt: def.tgt,
        }
    }

    /// Every meta relation, one per edge type, in edge type order.
    pub fn meta_relations(&self) -> Vec<MetaRelation> {
        (0..self.edge_types.len())
            .map(|i| self.meta_relation(EdgeTypeId(i)))
            .collect()
    }

    /// Edge types whose target is `tgt`, in id order.
    pub fn relations_into(&self, tgt: NodeTypeId) -> impl Iterator<Item = MetaRelation> + '_ {
        self.edge_types
            .iter()
            .enumerate()
            .filter(move |(_, d)| d.tgt == tgt)
            .map(move |(i, d)| MetaRelation {
                src: d.src,
                edge: EdgeTypeId(i),
                tgt,
            })
    }

    /// Checks that `rel` is the meta relation of its edge type.
    pub fn check_relation(&self, rel: MetaRelation) -> Result<()> {
        match self.edge_types.get(rel.edge.0) {
            Some(def) if def.src == rel.src && def.tgt == rel.tgt => Ok(()),
            _ => Err(Error::UnknownRelation(format!(
                "<{}, {}, {}>",
                rel.src, rel.edge, rel.tgt
            ))),
        }
    }

    /// Hex SHA-256 over the canonical JSON of the resolved schema.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex(&Sha256::digest(bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn academic_decl() -> SchemaFile {
        serde_json::from_str(
            r#"{
            "node_types": [
                {"name": "paper", "feature_dim": 4, "is_event": true},
                {"name": "author", "feature_dim": 3, "is_event": false},
                {"name": "venue", "feature_dim": 2, "is_event": false}
            ],
            "edge_types": [
                {"name": "writes", "src": "author", "tgt": "paper"},
                {"name": "cites", "src": "paper", "tgt": "paper", "inverse": "cited_by"},
                {"name": "published_in", "src": "paper", "tgt": "venue"},
                {"name": "coauthor", "src": "author", "tgt": "author", "symmetric": true}
            ]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn reverse_types_are_generated() {
        let s = Schema::from_decl(&academic_decl()).unwrap();
        assert_eq!(s.num_edge_types(), 7);
        let writes = s.edge_type("writes").unwrap();
        let rev = s.edge_type("writes~rev").unwrap();
        assert_eq!(s.inverse(writes), rev);
        assert_eq!(s.inverse(rev), writes);
        assert_eq!(s.edge_def(rev).src, s.node_type("paper").unwrap());
        assert!(s.edge_type("cited_by").is_some());
        let co = s.edge_type("coauthor").unwrap();
        assert_eq!(s.inverse(co), co);
    }

    #[test]
    fn inverse_is_an_involution() {
        let s = Schema::from_decl(&academic_decl()).unwrap().with_self_loops();
        for i in 0..s.num_edge_types() {
            let e = EdgeTypeId(i);
            assert_eq!(s.inverse(s.inverse(e)), e);
            let (a, b) = (s.meta_relation(e), s.meta_relation(s.inverse(e)));
            assert_eq!((a.src, a.tgt), (b.tgt, b.src));
        }
    }

    #[test]
    fn self_loops_cover_every_node_type() {
        let s = Schema::from_decl(&academic_decl()).unwrap().with_self_loops();
        for t in 0..s.num_node_types() {
            let name = format!("self~{}", s.node_name(NodeTypeId(t)));
            let e = s.edge_type(&name).unwrap();
            assert!(s.edge_def(e).symmetric);
        }
        let again = s.clone().with_self_loops();
        assert_eq!(again, s);
    }

    #[test]
    fn decl_round_trip() {
        let decl = academic_decl();
        let s = Schema::from_decl(&decl).unwrap();
        let back = Schema::from_decl(&s.to_decl()).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.hash(), back.hash());
    }

    #[test]
    fn rejects_bad_declarations() {
        let mut d = academic_decl();
        d.edge_types[0].src = "patent".into();
        assert!(matches!(Schema::from_decl(&d), Err(Error::Schema(_))));

        let mut d = academic_decl();
        d.edge_types[2].symmetric = true;
        assert!(Schema::from_decl(&d).is_err());

        let mut d = academic_decl();
        d.edge_types[1].inverse = Some("writes".into());
        assert!(Schema::from_decl(&d).is_err());
    }
}
