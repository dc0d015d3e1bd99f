//! The undirected artifact graph and its connected components.
//!
//! Every unique artifact — a post text, a pHash, a contact value — is one
//! vertex. Each record links its post vertex to the record's pHash and
//! contact vertices, so edges always join a post to a non-post artifact.
//! Ads that reuse an artifact end up in one connected component; when
//! generic or misappropriated artifacts are common, the largest component
//! grows to a large fraction of the whole graph (a giant component).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::ingest::{format_phash16, parse_phash16, Dataset};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("failed to read graph file: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad graph file at line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ArtifactKind {
    Post,
    PHash,
    Contact,
}

impl ArtifactKind {
    pub fn label(self) -> &'static str {
        match self {
            ArtifactKind::Post => "post",
            ArtifactKind::PHash => "phash",
            ArtifactKind::Contact => "contact",
        }
    }
}

/// One unique artifact value, the unit of graph vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ArtifactId {
    pub kind: ArtifactKind,
    pub key: u64,
}

impl ArtifactId {
    pub fn post(key: u64) -> Self {
        ArtifactId {
            kind: ArtifactKind::Post,
            key,
        }
    }
    pub fn phash(key: u64) -> Self {
        ArtifactId {
            kind: ArtifactKind::PHash,
            key,
        }
    }
    pub fn contact(key: u64) -> Self {
        ArtifactId {
            kind: ArtifactKind::Contact,
            key,
        }
    }
}

/// Simple undirected graph over interned artifacts: no self-loops, no
/// parallel edges, every edge has exactly one post endpoint.
#[derive(Debug, Clone, Default)]
pub struct ArtifactGraph {
    vertices: Vec<ArtifactId>,
    index: HashMap<ArtifactId, u32>,
    /// Normalized (min, max) pairs, sorted and deduplicated.
    edges: Vec<(u32, u32)>,
}

impl ArtifactGraph {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, idx: u32) -> ArtifactId {
        self.vertices[idx as usize]
    }

    pub fn vertices(&self) -> &[ArtifactId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn index_of(&self, id: ArtifactId) -> Option<u32> {
        self.index.get(&id).copied()
    }

    fn intern(&mut self, id: ArtifactId) -> u32 {
        if let Some(&idx) = self.index.get(&id) {
            return idx;
        }
        let idx = self.vertices.len() as u32;
        self.vertices.push(id);
        self.index.insert(id, idx);
        idx
    }

    fn finish_edges(&mut self, mut raw: Vec<(u32, u32)>) {
        for pair in raw.iter_mut() {
            if pair.0 > pair.1 {
                *pair = (pair.1, pair.0);
            }
        }
        raw.sort_unstable();
        raw.dedup();
        self.edges = raw;
    }

    /// Compressed adjacency for traversal-heavy algorithms.
    pub fn adjacency(&self) -> Adjacency {
        Adjacency::from_edges(self.vertex_count(), &self.edges)
    }
}

/// CSR-style adjacency built from an edge list.
#[derive(Debug, Clone)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl Adjacency {
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut degree = vec![0usize; n];
        for &(u, v) in edges {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets.clone();
        let mut neighbors = vec![0u32; edges.len() * 2];
        for &(u, v) in edges {
            neighbors[cursor[u as usize]] = v;
            cursor[u as usize] += 1;
            neighbors[cursor[v as usize]] = u;
            cursor[v as usize] += 1;
        }
        Adjacency { offsets, neighbors }
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.neighbors[self.offsets[v as usize]..self.offsets[v as usize + 1]]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.offsets[v as usize + 1] - self.offsets[v as usize]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the artifact graph from (deduplicated) records. Vertices are
/// interned in first-appearance order; duplicate (post, artifact) pairs
/// collapse to one edge.
pub fn build_graph(dataset: &Dataset) -> ArtifactGraph {
    let mut graph = ArtifactGraph::default();
    let mut raw_edges = Vec::new();
    for record in &dataset.records {
        let post = graph.intern(ArtifactId::post(record.post_key));
        for &ph in &record.phashes {
            let v = graph.intern(ArtifactId::phash(ph));
            raw_edges.push((post, v));
        }
        for &phone in &record.phones {
            let v = graph.intern(ArtifactId::contact(phone));
            raw_edges.push((post, v));
        }
    }
    graph.finish_edges(raw_edges);
    graph
}

/// Union-find with path compression and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    pub fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

/// A partition of the vertex set: `labels[v]` is the component id of `v`,
/// ids are dense and assigned in order of each component's first vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSet {
    labels: Vec<u32>,
    sizes: Vec<u32>,
}

impl ComponentSet {
    /// Normalizes arbitrary labels into dense first-occurrence order.
    pub fn from_labels(raw: &[u32]) -> Self {
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        let mut sizes: Vec<u32> = Vec::new();
        for &r in raw {
            let next = remap.len() as u32;
            let id = *remap.entry(r).or_insert(next);
            if id as usize == sizes.len() {
                sizes.push(0);
            }
            sizes[id as usize] += 1;
            labels.push(id);
        }
        ComponentSet { labels, sizes }
    }

    pub fn label(&self, v: u32) -> u32 {
        self.labels[v as usize]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    /// Vertices of one component, in index order.
    pub fn members(&self, component: u32) -> Vec<u32> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == component)
            .map(|(v, _)| v as u32)
            .collect()
    }
}

/// Labels every vertex with its connected component.
pub fn connected_components(graph: &ArtifactGraph) -> ComponentSet {
    components_of_edges(graph.vertex_count(), graph.edges().iter().copied())
}

pub fn components_of_edges(n: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> ComponentSet {
    let mut uf = UnionFind::new(n);
    for (u, v) in edges {
        uf.union(u, v);
    }
    let roots: Vec<u32> = (0..n as u32).map(|v| uf.find(v)).collect();
    ComponentSet::from_labels(&roots)
}

/// The largest component, if it is large enough to matter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GiantComponentInfo {
    pub component_id: u32,
    pub size: u32,
    /// Size over the total vertex count, in [0, 1].
    pub proportion: f64,
}

/// Returns the largest component when its share of vertices reaches
/// `p_min`; otherwise `None` (filtering is skipped on such graphs).
pub fn giant_component(components: &ComponentSet, p_min: f64) -> Option<GiantComponentInfo> {
    let total = components.vertex_count();
    if total == 0 {
        return None;
    }
    let (component_id, &size) = components
        .sizes()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, s)| (i as u32, s))?;
    let proportion = f64::from(size) / total as f64;
    if proportion >= p_min {
        Some(GiantComponentInfo {
            component_id,
            size,
            proportion,
        })
    } else {
        None
    }
}

/// Headline statistics for a built graph.
#[derive(Debug, Clone, Serialize)]
pub struct GraphStats {
    pub vertices: usize,
    pub edges: usize,
    pub components: usize,
    pub gc_proportion: f64,
}

pub fn graph_stats(graph: &ArtifactGraph, components: &ComponentSet) -> GraphStats {
    let gc_proportion = components
        .sizes()
        .iter()
        .max()
        .map(|&s| f64::from(s) / graph.vertex_count().max(1) as f64)
        .unwrap_or(0.0);
    GraphStats {
        vertices: graph.vertex_count(),
        edges: graph.edge_count(),
        components: components.len(),
        gc_proportion,
    }
}

const GRAPH_HEADER: &str = "# adlink graph v1";

/// Writes the vertex table (kind, key, index) followed by the sorted edge
/// list. pHash keys render as 16 hex chars, other keys as decimal.
pub fn write_graph(graph: &ArtifactGraph, path: &Path) -> Result<(), GraphError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{GRAPH_HEADER}")?;
    for (idx, id) in graph.vertices.iter().enumerate() {
        match id.kind {
            ArtifactKind::PHash => writeln!(out, "v\tphash\t{}\t{}", format_phash16(id.key), idx)?,
            kind => writeln!(out, "v\t{}\t{}\t{}", kind.label(), id.key, idx)?,
        }
    }
    for &(u, v) in &graph.edges {
        writeln!(out, "e\t{u}\t{v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_graph(path: &Path) -> Result<ArtifactGraph, GraphError> {
    let reader = BufReader::new(File::open(path)?);
    let mut graph = ArtifactGraph::default();
    let mut edges = Vec::new();
    let bad = |line: usize, reason: &str| GraphError::Format {
        line,
        reason: reason.to_string(),
    };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["v", kind, key, idx] => {
                let id = match *kind {
                    "post" => ArtifactId::post(key.parse().map_err(|_| bad(lineno, "bad key"))?),
                    "contact" => {
                        ArtifactId::contact(key.parse().map_err(|_| bad(lineno, "bad key"))?)
                    }
                    "phash" => ArtifactId::phash(
                        parse_phash16(key).ok_or_else(|| bad(lineno, "bad phash key"))?,
                    ),
                    _ => return Err(bad(lineno, "unknown vertex kind")),
                };
                let expect: u32 = idx.parse().map_err(|_| bad(lineno, "bad index"))?;
                let got = graph.intern(id);
                if got != expect {
                    return Err(bad(lineno, "vertex index out of order"));
                }
            }
            ["e", u, v] => {
                let u: u32 = u.parse().map_err(|_| bad(lineno, "bad edge endpoint"))?;
                let v: u32 = v.parse().map_err(|_| bad(lineno, "bad edge endpoint"))?;
                if u.max(v) as usize >= graph.vertex_count() {
                    return Err(bad(lineno, "edge endpoint out of range"));
                }
                edges.push((u, v));
            }
            _ => return Err(bad(lineno, "unrecognized line")),
        }
    }
    graph.finish_edges(edges);
    Ok(graph)
}
