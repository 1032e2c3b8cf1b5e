//! Typed, timestamped heterogeneous graph store.
//!
//! Nodes are identified by `(type, dense local index)`. Every edge type has a
//! reverse (or is symmetric), and adjacency is kept per edge type in CSR form
//! keyed by target node, so incoming edges of a node under one meta relation
//! are a contiguous slice.

pub mod bundle;
mod graph;
pub mod io;
mod schema;

pub use graph::{
    build_graph, Adjacency, BuildOptions, EdgeRecord, FeatureMatrix, GraphBuilder, HeteroGraph, Incident,
    NodeRecord, NodeRef,
};
pub use schema::{
    EdgeOrigin, EdgeTypeDecl, EdgeTypeDef, EdgeTypeId, MetaRelation, NodeTypeDef, NodeTypeId, Schema, SchemaFile,
    REVERSE_SUFFIX, SELF_PREFIX,
};

use std::path::Path;

use crate::error::Result;

/// Opens a graph directory: an ingested bundle when `graph.bin` is present,
/// the flat-file layout otherwise.
pub fn open(dir: &Path, opts: BuildOptions) -> Result<HeteroGraph> {
    let g = if dir.join(bundle::BUNDLE_FILE).exists() {
        bundle::read_bundle(dir)?
    } else {
        io::load_dir(dir, opts)?
    };
    Ok(if opts.self_loops { g.with_self_loops() } else { g })
}
