//! Flat-file graph layout:
//!
//! ```text
//! schema.json
//! nodes.tsv            type  local_id  timestamp      (timestamp blank for plain nodes)
//! edges.tsv            edge_type  src_type  src_id  tgt_type  tgt_id  timestamp
//! features.<type>.f32  row-major little-endian f32, rows x feature_dim
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::graph::{BuildOptions, EdgeRecord, FeatureMatrix, GraphBuilder, HeteroGraph, NodeRecord};
use super::schema::{EdgeOrigin, EdgeTypeId, NodeTypeId, Schema};
use crate::error::{Error, Result};

pub const SCHEMA_FILE: &str = "schema.json";
pub const NODES_FILE: &str = "nodes.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const NODES_HEADER: &str = "type\tlocal_id\ttimestamp";
pub const EDGES_HEADER: &str = "edge_type\tsrc_type\tsrc_id\ttgt_type\ttgt_id\ttimestamp";

pub fn features_file(type_name: &str) -> String {
    format!("features.{type_name}.f32")
}

fn parse_usize(field: &str, line: usize, what: &str) -> Result<usize> {
    field.trim().parse().map_err(|_| Error::BadRecord {
        line,
        msg: format!("{what}: `{field}` is not a non-negative integer"),
    })
}

fn parse_i64(field: &str, line: usize, what: &str) -> Result<i64> {
    field.trim().parse().map_err(|_| Error::BadRecord {
        line,
        msg: format!("{what}: `{field}` is not an integer"),
    })
}

/// Reads a headed TSV, calling `f(line_number, fields)` per data line.
fn for_each_row(path: &Path, header: &str, mut f: impl FnMut(usize, &[&str]) -> Result<()>) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    if first.trim_end_matches('\r') != header {
        return Err(Error::BadRecord {
            line: 1,
            msg: format!("{}: expected header `{}`", path.display(), header.replace('\t', "<TAB>")),
        });
    }
    let want = header.split('\t').count();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let lineno = i + 2;
        if fields.len() != want {
            return Err(Error::BadRecord {
                line: lineno,
                msg: format!("expected {want} fields, got {}", fields.len()),
            });
        }
        f(lineno, &fields)?;
    }
    Ok(())
}

pub fn read_nodes(path: &Path) -> Result<Vec<NodeRecord>> {
    let mut out = Vec::new();
    for_each_row(path, NODES_HEADER, |line, f| {
        let time = if f[2].trim().is_empty() {
            None
        } else {
            Some(parse_i64(f[2], line, "timestamp")?)
        };
        out.push(NodeRecord {
            ty: f[0].to_string(),
            id: parse_usize(f[1], line, "local_id")?,
            time,
            line,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_edges(path: &Path) -> Result<Vec<EdgeRecord>> {
    let mut out = Vec::new();
    for_each_row(path, EDGES_HEADER, |line, f| {
        out.push(EdgeRecord {
            edge_type: f[0].to_string(),
            src_type: f[1].to_string(),
            src_id: parse_usize(f[2], line, "src_id")?,
            tgt_type: f[3].to_string(),
            tgt_id: parse_usize(f[4], line, "tgt_id")?,
            time: parse_i64(f[5], line, "timestamp")?,
            line,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_features(path: &Path, type_name: &str, rows: usize, dim: usize) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Features {
            ty: type_name.to_string(),
            msg: format!("missing features file {}", path.display()),
        },
        _ => Error::io(path, e),
    })?;
    if bytes.len() != rows * dim * 4 {
        return Err(Error::Features {
            ty: type_name.to_string(),
            msg: format!("expected {rows}x{dim} f32 values ({} bytes), file has {} bytes", rows * dim * 4, bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(FeatureMatrix { rows, dim, data })
}

pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(features.data.len() * 4);
    for v in &features.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads `schema.json`, `nodes.tsv`, `edges.tsv` and every feature sidecar.
pub fn load_dir(dir: &Path, opts: BuildOptions) -> Result<HeteroGraph> {
    let schema = Schema::load(&dir.join(SCHEMA_FILE))?;
    let nodes = read_nodes(&dir.join(NODES_FILE))?;
    let edges = read_edges(&dir.join(EDGES_FILE))?;

    let mut b = GraphBuilder::new(schema);
    let mut counts = vec![0usize; b.schema().num_node_types()];
    for n in &nodes {
        let r = b.add_node(n)?;
        counts[r.ty.0] = counts[r.ty.0].max(r.id + 1);
    }
    for e in &edges {
        b.add_edge(e)?;
    }
    for (t, &rows) in counts.iter().enumerate() {
        let ty = NodeTypeId(t);
        let def = b.schema().node_def(ty).clone();
        let f = read_features(&dir.join(features_file(&def.name)), &def.name, rows, def.feature_dim)?;
        b.set_features(ty, f)?;
    }
    b.build(opts)
}

/// Writes the flat-file layout. Only declared edge types are emitted (mirrors
/// and self loops are regenerated on load); a symmetric pair is emitted once.
pub fn write_dir(graph: &HeteroGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = graph.schema();
    let decl = serde_json::to_string_pretty(&schema.to_decl())? + "\n";
    let p = dir.join(SCHEMA_FILE);
    fs::write(&p, decl).map_err(|e| Error::io(&p, e))?;

    let p = dir.join(NODES_FILE);
    let file = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(dir.join(NODES_FILE), e);
    writeln!(w, "{NODES_HEADER}").map_err(io)?;
    for t in 0..schema.num_node_types() {
        let ty = NodeTypeId(t);
        let name = schema.node_name(ty);
        for id in 0..graph.num_nodes(ty) {
            match graph.node_time(super::NodeRef { ty, id }) {
                Some(time) => writeln!(w, "{name}\t{id}\t{time}"),
                None => writeln!(w, "{name}\t{id}\t"),
            }
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)?;

    let p = dir.join(EDGES_FILE);
    let file = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(dir.join(EDGES_FILE), e);
    writeln!(w, "{EDGES_HEADER}").map_err(io)?;
    for (e, def) in schema.edge_types().iter().enumerate() {
        if def.origin != EdgeOrigin::Declared {
            continue;
        }
        let (src, tgt) = (schema.node_name(def.src), schema.node_name(def.tgt));
        let adj = graph.adjacency(EdgeTypeId(e));
        for t in 0..adj.num_targets() {
            for inc in adj.row(t) {
                if def.symmetric && inc.src > t {
                    continue;
                }
                writeln!(w, "{}\t{src}\t{}\t{tgt}\t{t}\t{}", def.name, inc.src, inc.time).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;

    for t in 0..schema.num_node_types() {
        let ty = NodeTypeId(t);
        write_features(&dir.join(features_file(schema.node_name(ty))), graph.features(ty))?;
    }
    Ok(())
}

/// Integer node labels from `labels.tsv` (`type<TAB>local_id<TAB>label`).
pub const LABELS_FILE: &str = "labels.tsv";
pub const LABELS_HEADER: &str = "type\tlocal_id\tlabel";

pub fn read_labels(path: &Path, schema: &Schema, ty: NodeTypeId, count: usize) -> Result<Vec<Option<usize>>> {
    let mut labels = vec![None; count];
    let want = schema.node_name(ty);
    for_each_row(path, LABELS_HEADER, |line, f| {
        if schema.node_type(f[0]).is_none() {
            return Err(Error::UnknownType {
                line,
                name: f[0].to_string(),
            });
        }
        if f[0] != want {
            return Ok(());
        }
        let id = parse_usize(f[1], line, "local_id")?;
        if id >= count {
            return Err(Error::BadRecord {
                line,
                msg: format!("label for missing node {want}:{id}"),
            });
        }
        labels[id] = Some(parse_usize(f[2], line, "label")?);
        Ok(())
    })?;
    Ok(labels)
}

pub fn write_labels(path: &Path, type_name: &str, labels: &[usize]) -> Result<()> {
    let mut s = String::from(LABELS_HEADER);
    s.push('\n');
    for (i, l) in labels.iter().enumerate() {
        s.push_str(&format!("{type_name}\t{i}\t{l}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::graph::Incident;
    use crate::synth::toy_academic;

    fn sorted_rows(g: &HeteroGraph) -> Vec<Vec<Vec<Incident>>> {
        (0..g.schema().num_edge_types())
            .map(|e| {
                let adj = g.adjacency(EdgeTypeId(e));
                (0..adj.num_targets())
                    .map(|t| {
                        let mut r = adj.row(t).to_vec();
                        r.sort();
                        r
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let g = toy_academic(3).build().unwrap();
        write_dir(&g, dir.path()).unwrap();
        let g2 = load_dir(dir.path(), BuildOptions::default()).unwrap();
        assert_eq!(g.schema(), g2.schema());
        assert_eq!(g.counts, g2.counts);
        assert_eq!(g.times, g2.times);
        assert_eq!(g.features, g2.features);
        assert_eq!(sorted_rows(&g), sorted_rows(&g2));

        // second trip is exact, including per-row order
        let dir2 = tempfile::tempdir().unwrap();
        write_dir(&g2, dir2.path()).unwrap();
        let g3 = load_dir(dir2.path(), BuildOptions::default()).unwrap();
        assert_eq!(g2, g3);
    }

    #[test]
    fn missing_features_names_the_type() {
        let dir = tempfile::tempdir().unwrap();
        let g = toy_academic(3).build().unwrap();
        write_dir(&g, dir.path()).unwrap();
        fs::remove_file(dir.path().join(features_file("venue"))).unwrap();
        match load_dir(dir.path(), BuildOptions::default()).unwrap_err() {
            Error::Features { ty, .. } => assert_eq!(ty, "venue"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_feature_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = toy_academic(3).build().unwrap();
        write_dir(&g, dir.path()).unwrap();
        fs::write(dir.path().join(features_file("field")), [0u8; 12]).unwrap();
        assert!(matches!(
            load_dir(dir.path(), BuildOptions::default()),
            Err(Error::Features { .. })
        ));
    }

    #[test]
    fn bad_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let g = toy_academic(3).build().unwrap();
        write_dir(&g, dir.path()).unwrap();
        let p = dir.path().join(EDGES_FILE);
        let mut text = fs::read_to_string(&p).unwrap();
        let lines = text.lines().count();
        text.push_str("writes\tpatent\t0\tpaper\t0\t2001\n");
        fs::write(&p, text).unwrap();
        match load_dir(dir.path(), BuildOptions::default()).unwrap_err() {
            Error::UnknownType { line, name } => {
                assert_eq!(line, lines + 1);
                assert_eq!(name, "patent");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
