//! Versioned binary graph bundle written by `ingest`.
//!
//! `graph.bin` layout (all integers little-endian):
//!
//! ```text
//! magic "HGTBNDL\0" | version u32 | schema_len u64 | schema JSON
//! per node type:  count u64 | event u8 | [time i64; count if event] | dim u64 | [f32; count*dim]
//! per edge type:  targets u64 | [offset u64; targets+1] | [(src u64, time i64); offsets[last]]
//! ```
//!
//! `manifest.json` carries the schema hash, the bundle digest and the
//! per-type node and edge counts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{Adjacency, FeatureMatrix, HeteroGraph, Incident};
use super::schema::{hex, EdgeTypeId, NodeTypeId, Schema};
use crate::error::{Error, Result};

pub const BUNDLE_FILE: &str = "graph.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUNDLE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HGTBNDL\0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCount {
    #[serde(rename = "type")]
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub schema_hash: String,
    pub bundle_sha256: String,
    pub node_counts: Vec<TypeCount>,
    pub edge_counts: Vec<TypeCount>,
}

impl Manifest {
    pub fn for_graph(graph: &HeteroGraph, digest: String) -> Self {
        let s = graph.schema();
        Manifest {
            format: "hgt-bundle".into(),
            version: BUNDLE_VERSION,
            schema_hash: s.hash(),
            bundle_sha256: digest,
            node_counts: (0..s.num_node_types())
                .map(|t| TypeCount {
                    name: s.node_name(NodeTypeId(t)).to_string(),
                    count: graph.num_nodes(NodeTypeId(t)),
                })
                .collect(),
            edge_counts: (0..s.num_edge_types())
                .map(|e| TypeCount {
                    name: s.edge_name(EdgeTypeId(e)).to_string(),
                    count: graph.num_edges(EdgeTypeId(e)),
                })
                .collect(),
        }
    }
}

pub fn encode(graph: &HeteroGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    let schema = serde_json::to_vec(graph.schema()).expect("schema serializes");
    out.extend_from_slice(&(schema.len() as u64).to_le_bytes());
    out.extend_from_slice(&schema);
    for t in 0..graph.schema().num_node_types() {
        out.extend_from_slice(&(graph.counts[t] as u64).to_le_bytes());
        match &graph.times[t] {
            Some(times) => {
                out.push(1);
                for v in times {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        let f = &graph.features[t];
        out.extend_from_slice(&(f.dim as u64).to_le_bytes());
        for v in &f.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for adj in &graph.adjacency {
        out.extend_from_slice(&(adj.num_targets() as u64).to_le_bytes());
        for &o in adj.offsets() {
            out.extend_from_slice(&(o as u64).to_le_bytes());
        }
        for inc in adj.entries() {
            out.extend_from_slice(&(inc.src as u64).to_le_bytes());
            out.extend_from_slice(&inc.time.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Data("truncated graph bundle".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Data("bundle size overflows usize".into()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<HeteroGraph> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Data("not a graph bundle".into()));
    }
    let version = r.u32()?;
    if version != BUNDLE_VERSION {
        return Err(Error::Data(format!("unsupported bundle version {version}")));
    }
    let len = r.usize()?;
    let schema: Schema = serde_json::from_slice(r.take(len)?)?;
    let mut counts = Vec::new();
    let mut times = Vec::new();
    let mut features = Vec::new();
    for _ in 0..schema.num_node_types() {
        let n = r.usize()?;
        counts.push(n);
        times.push(match r.u8()? {
            0 => None,
            _ => Some((0..n).map(|_| r.i64()).collect::<Result<Vec<_>>>()?),
        });
        let dim = r.usize()?;
        let data = (0..n * dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        features.push(FeatureMatrix { rows: n, dim, data });
    }
    let mut adjacency = Vec::new();
    for e in 0..schema.num_edge_types() {
        let targets = r.usize()?;
        if targets != counts[schema.edge_def(EdgeTypeId(e)).tgt.0] {
            return Err(Error::Data("bundle adjacency does not match node counts".into()));
        }
        let offsets = (0..=targets).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let m = *offsets.last().unwrap_or(&0);
        let entries = (0..m)
            .map(|_| {
                Ok(Incident {
                    src: r.usize()?,
                    time: r.i64()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        adjacency.push(Adjacency::from_raw(offsets, entries)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Data("trailing bytes in graph bundle".into()));
    }
    Ok(HeteroGraph {
        schema,
        counts,
        times,
        features,
        adjacency,
    })
}

/// Writes `graph.bin` and `manifest.json` into `dir`.
pub fn write_bundle(graph: &HeteroGraph, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = encode(graph);
    let manifest = Manifest::for_graph(graph, hex(&Sha256::digest(&bytes)));
    let p = dir.join(BUNDLE_FILE);
    fs::write(&p, &bytes).map_err(|e| Error::io(&p, e))?;
    let p = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

pub fn read_bundle(dir: &Path) -> Result<HeteroGraph> {
    let p = dir.join(BUNDLE_FILE);
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    decode(&bytes)
}
