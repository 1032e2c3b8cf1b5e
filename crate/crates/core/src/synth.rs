//! Synthetic heterogeneous graphs.
//!
//! [`toy_academic`] is a small fixed-size academic graph used as a fixture.
//! [`planted`] generates a paper/author/venue/field graph whose paper classes
//! correlate with neighborhood composition, so classification is learnable
//! from structure alone (features carry no class signal).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::io::{self, LABELS_FILE};
use crate::hetgraph::{
    BuildOptions, EdgeRecord, EdgeTypeDecl, FeatureMatrix, GraphBuilder, HeteroGraph, NodeRecord, NodeTypeDef,
    Schema, SchemaFile,
};
use crate::rng::{derive, Stream};

/// Record-level output of a generator.
#[derive(Debug, Clone)]
pub struct GeneratedGraph {
    pub schema: SchemaFile,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
    pub features: Vec<FeatureMatrix>,
    /// `(node type, label per node)`.
    pub labels: Option<(String, Vec<usize>)>,
}

impl GeneratedGraph {
    pub fn build(&self) -> Result<HeteroGraph> {
        self.build_with(BuildOptions::default())
    }

    pub fn build_with(&self, opts: BuildOptions) -> Result<HeteroGraph> {
        let mut b = GraphBuilder::new(Schema::from_decl(&self.schema)?);
        for n in &self.nodes {
            b.add_node(n)?;
        }
        for e in &self.edges {
            b.add_edge(e)?;
        }
        for (t, f) in self.features.iter().enumerate() {
            b.set_features(crate::hetgraph::NodeTypeId(t), f.clone())?;
        }
        b.build(opts)
    }

    /// Writes the flat-file layout plus `labels.tsv`, records in generation order.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(io::SCHEMA_FILE);
        std::fs::write(&p, serde_json::to_string_pretty(&self.schema)? + "\n").map_err(|e| Error::io(&p, e))?;

        let mut s = String::from(io::NODES_HEADER);
        s.push('\n');
        for n in &self.nodes {
            match n.time {
                Some(t) => s.push_str(&format!("{}\t{}\t{t}\n", n.ty, n.id)),
                None => s.push_str(&format!("{}\t{}\t\n", n.ty, n.id)),
            }
        }
        let p = dir.join(io::NODES_FILE);
        std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;

        let mut s = String::from(io::EDGES_HEADER);
        s.push('\n');
        for e in &self.edges {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.edge_type, e.src_type, e.src_id, e.tgt_type, e.tgt_id, e.time
            ));
        }
        let p = dir.join(io::EDGES_FILE);
        std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;

        for (nt, f) in self.schema.node_types.iter().zip(&self.features) {
            io::write_features(&dir.join(io::features_file(&nt.name)), f)?;
        }
        if let Some((ty, labels)) = &self.labels {
            io::write_labels(&dir.join(LABELS_FILE), ty, labels)?;
        }
        Ok(())
    }
}

fn node_type(name: &str, feature_dim: usize, is_event: bool) -> NodeTypeDef {
    NodeTypeDef {
        name: name.into(),
        feature_dim,
        is_event,
    }
}

fn edge_type(name: &str, src: &str, tgt: &str) -> EdgeTypeDecl {
    EdgeTypeDecl {
        name: name.into(),
        src: src.into(),
        tgt: tgt.into(),
        symmetric: false,
        inverse: None,
    }
}

fn edge(et: &str, st: &str, s: usize, tt: &str, t: usize, time: i64) -> EdgeRecord {
    EdgeRecord {
        edge_type: et.into(),
        src_type: st.into(),
        src_id: s,
        tgt_type: tt.into(),
        tgt_id: t,
        time,
        line: 0,
    }
}

fn random_features(rng: &mut impl Rng, rows: usize, dim: usize) -> FeatureMatrix {
    FeatureMatrix {
        rows,
        dim,
        data: (0..rows * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    }
}

fn plain_nodes(nodes: &mut Vec<NodeRecord>, ty: &str, n: usize) {
    nodes.extend((0..n).map(|id| NodeRecord {
        ty: ty.into(),
        id,
        time: None,
        line: 0,
    }));
}

pub const TOY_PAPERS: usize = 40;
pub const TOY_AUTHORS: usize = 25;
pub const TOY_VENUES: usize = 5;
pub const TOY_FIELDS: usize = 10;
pub const TOY_INSTITUTES: usize = 3;

/// Small academic fixture: 40 papers (event nodes, years 2000..=2019),
/// 25 authors, 5 venues, 10 fields and 3 institutes (plain nodes).
/// Venue 0 always hosts papers from 2000 and 2019.
pub fn toy_academic(seed: u64) -> GeneratedGraph {
    let mut rng = derive(seed, Stream::Synth, 0);
    let schema = SchemaFile {
        node_types: vec![
            node_type("paper", 8, true),
            node_type("author", 4, false),
            node_type("venue", 4, false),
            node_type("field", 4, false),
            node_type("institute", 2, false),
        ],
        edge_types: vec![
            edge_type("writes", "author", "paper"),
            edge_type("published_in", "paper", "venue"),
            edge_type("has_field", "paper", "field"),
            edge_type("cites", "paper", "paper"),
            edge_type("affiliated_with", "author", "institute"),
        ],
    };
    let years: Vec<i64> = (0..TOY_PAPERS)
        .map(|i| match i {
            0 => 2000,
            1 => 2019,
            _ => 2000 + rng.gen_range(0..20),
        })
        .collect();
    let mut nodes: Vec<NodeRecord> = years
        .iter()
        .enumerate()
        .map(|(id, &y)| NodeRecord {
            ty: "paper".into(),
            id,
            time: Some(y),
            line: 0,
        })
        .collect();
    plain_nodes(&mut nodes, "author", TOY_AUTHORS);
    plain_nodes(&mut nodes, "venue", TOY_VENUES);
    plain_nodes(&mut nodes, "field", TOY_FIELDS);
    plain_nodes(&mut nodes, "institute", TOY_INSTITUTES);

    let mut edges = Vec::new();
    let authors: Vec<usize> = (0..TOY_AUTHORS).collect();
    let fields: Vec<usize> = (0..TOY_FIELDS).collect();
    for (p, &y) in years.iter().enumerate() {
        let k = rng.gen_range(1..=3);
        for &a in authors.choose_multiple(&mut rng, k) {
            edges.push(edge("writes", "author", a, "paper", p, y));
        }
        let venue = if p < 2 { 0 } else { rng.gen_range(0..TOY_VENUES) };
        edges.push(edge("published_in", "paper", p, "venue", venue, y));
        let k = rng.gen_range(1..=2);
        for &f in fields.choose_multiple(&mut rng, k) {
            edges.push(edge("has_field", "paper", p, "field", f, y));
        }
        let older: Vec<usize> = (0..TOY_PAPERS).filter(|&q| q != p && years[q] <= y).collect();
        let k = rng.gen_range(0..=3).min(older.len());
        for &q in older.choose_multiple(&mut rng, k) {
            edges.push(edge("cites", "paper", p, "paper", q, y));
        }
    }
    for a in 0..TOY_AUTHORS {
        let inst = a % TOY_INSTITUTES;
        edges.push(edge("affiliated_with", "author", a, "institute", inst, 2000 + rng.gen_range(0..20)));
    }

    let features = schema
        .node_types
        .iter()
        .zip([TOY_PAPERS, TOY_AUTHORS, TOY_VENUES, TOY_FIELDS, TOY_INSTITUTES])
        .map(|(nt, n)| random_features(&mut rng, n, nt.feature_dim))
        .collect();
    GeneratedGraph {
        schema,
        nodes,
        edges,
        features,
        labels: None,
    }
}

/// Planted-class generator settings (`synth` subcommand config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub papers: usize,
    pub authors: usize,
    pub venues: usize,
    pub fields: usize,
    pub classes: usize,
    /// Probability that each link of a paper goes to a same-class endpoint.
    pub correlation: f64,
    /// Paper timestamps are drawn uniformly from `[time_start, time_end)`.
    pub time_start: i64,
    pub time_end: i64,
    pub citations_per_paper: usize,
    pub authors_per_paper: usize,
    pub fields_per_paper: usize,
    pub feature_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            papers: 1000,
            authors: 200,
            venues: 10,
            fields: 10,
            classes: 5,
            correlation: 0.9,
            time_start: 0,
            time_end: 100,
            citations_per_paper: 4,
            authors_per_paper: 2,
            fields_per_paper: 1,
            feature_dim: 16,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.papers == 0 || self.authors == 0 || self.venues == 0 || self.fields == 0 {
            return bad("every node type needs at least one node");
        }
        if self.classes == 0 || self.classes > self.venues.min(self.fields).min(self.authors) {
            return bad("classes must be in 1..=min(authors, venues, fields)");
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return bad("correlation must be in [0, 1]");
        }
        if self.time_end <= self.time_start {
            return bad("time_end must exceed time_start");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        Ok(())
    }
}

/// Class of a plain node under the planted layout: node `i` belongs to class
/// `i % classes`.
pub fn planted_class(id: usize, classes: usize) -> usize {
    id % classes
}

/// Paper/author/venue/field graph with planted paper classes.
pub fn planted(cfg: &SynthConfig) -> Result<GeneratedGraph> {
    cfg.validate()?;
    let mut rng = derive(cfg.seed, Stream::Synth, 1);
    let c = cfg.classes;
    let schema = SchemaFile {
        node_types: vec![
            node_type("paper", cfg.feature_dim, true),
            node_type("author", cfg.feature_dim, false),
            node_type("venue", cfg.feature_dim, false),
            node_type("field", cfg.feature_dim, false),
        ],
        edge_types: vec![
            edge_type("cites", "paper", "paper"),
            edge_type("writes", "author", "paper"),
            edge_type("published_in", "paper", "venue"),
            edge_type("has_field", "paper", "field"),
        ],
    };

    let labels: Vec<usize> = (0..cfg.papers).map(|_| rng.gen_range(0..c)).collect();
    let times: Vec<i64> = (0..cfg.papers)
        .map(|_| rng.gen_range(cfg.time_start..cfg.time_end))
        .collect();
    let mut nodes: Vec<NodeRecord> = times
        .iter()
        .enumerate()
        .map(|(id, &t)| NodeRecord {
            ty: "paper".into(),
            id,
            time: Some(t),
            line: 0,
        })
        .collect();
    plain_nodes(&mut nodes, "author", cfg.authors);
    plain_nodes(&mut nodes, "venue", cfg.venues);
    plain_nodes(&mut nodes, "field", cfg.fields);

    let by_class = |n: usize| -> Vec<Vec<usize>> {
        let mut v = vec![Vec::new(); c];
        for i in 0..n {
            v[planted_class(i, c)].push(i);
        }
        v
    };
    let authors_by = by_class(cfg.authors);
    let venues_by = by_class(cfg.venues);
    let fields_by = by_class(cfg.fields);

    // planted pick: same-class pool with probability `correlation`, else uniform
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, pool: &[usize], all: usize| -> usize {
        if !pool.is_empty() && rng.gen_bool(cfg.correlation) {
            pool[rng.gen_range(0..pool.len())]
        } else {
            rng.gen_range(0..all)
        }
    };

    let mut order: Vec<usize> = (0..cfg.papers).collect();
    order.sort_by_key(|&p| (times[p], p));
    let mut earlier_by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut earlier: Vec<usize> = Vec::new();
    let mut edges = Vec::new();
    for &p in &order {
        let (y, cls) = (times[p], labels[p]);
        let mut chosen = Vec::new();
        for _ in 0..cfg.authors_per_paper {
            let a = pick(&mut rng, &authors_by[cls], cfg.authors);
            if !chosen.contains(&a) {
                chosen.push(a);
                edges.push(edge("writes", "author", a, "paper", p, y));
            }
        }
        let v = pick(&mut rng, &venues_by[cls], cfg.venues);
        edges.push(edge("published_in", "paper", p, "venue", v, y));
        let mut chosen = Vec::new();
        for _ in 0..cfg.fields_per_paper {
            let f = pick(&mut rng, &fields_by[cls], cfg.fields);
            if !chosen.contains(&f) {
                chosen.push(f);
                edges.push(edge("has_field", "paper", p, "field", f, y));
            }
        }
        if !earlier.is_empty() {
            let mut chosen = Vec::new();
            for _ in 0..cfg.citations_per_paper {
                let same = &earlier_by_class[cls];
                let q = if !same.is_empty() && rng.gen_bool(cfg.correlation) {
                    same[rng.gen_range(0..same.len())]
                } else {
                    earlier[rng.gen_range(0..earlier.len())]
                };
                if !chosen.contains(&q) {
                    chosen.push(q);
                    edges.push(edge("cites", "paper", p, "paper", q, y));
                }
            }
        }
        earlier.push(p);
        earlier_by_class[cls].push(p);
    }

    let counts = [cfg.papers, cfg.authors, cfg.venues, cfg.fields];
    let features = counts
        .iter()
        .map(|&n| random_features(&mut rng, n, cfg.feature_dim))
        .collect();
    Ok(GeneratedGraph {
        schema,
        nodes,
        edges,
        features,
        labels: Some(("paper".into(), labels)),
    })
}

/// 1-hop majority vote over citation neighbors (both directions) using the
/// true labels of those neighbors. Ties go to the lowest class; papers with no
/// citation neighbors predict class 0.
pub fn citation_vote_accuracy(g: &GeneratedGraph) -> f64 {
    let Some((_, labels)) = &g.labels else {
        return 0.0;
    };
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let mut votes = vec![vec![0usize; classes]; labels.len()];
    for e in g.edges.iter().filter(|e| e.edge_type == "cites") {
        votes[e.src_id][labels[e.tgt_id]] += 1;
        votes[e.tgt_id][labels[e.src_id]] += 1;
    }
    let correct = votes
        .iter()
        .zip(labels)
        .filter(|(v, &l)| {
            let best = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map_or(0, |(i, _)| i);
            best == l
        })
        .count();
    correct as f64 / labels.len() as f64
}
