//! Giant-component filtering.
//!
//! The giant component lumps many posting entities together through
//! generic and misappropriated artifacts. This module breaks it apart:
//! project the giant component onto its post vertices, score every
//! projection edge with the same-user classifier, drop edges whose
//! probability falls under a threshold δ, and relabel the resulting
//! components. Posts outside the giant component keep their original
//! grouping, so no post is ever lost.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    components_of_edges, ArtifactGraph, ArtifactId, ArtifactKind, ComponentSet, GiantComponentInfo,
};
use crate::similarity::{EmbeddingProvider, SameUserClassifier, SimilarityError};

#[derive(Debug, Error)]
pub enum GcFilterError {
    #[error("failed to read or write assignment file: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad assignment file at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("giant component holds no post vertices; the graph is malformed")]
    NoPostsInGiant,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// Thresholds controlling the filter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Projection edges with same-user probability below this are cut.
    pub delta: f64,
    /// Minimum share of vertices for a component to count as giant.
    pub p_min: f64,
    /// Post-degree above which an artifact's clique expansion is sampled
    /// instead of materialized in full. `None` disables the cap.
    pub hub_cap: Option<usize>,
}

pub const DEFAULT_DELTA: f64 = 0.7;
pub const DEFAULT_P_MIN: f64 = 0.05;
pub const DEFAULT_HUB_CAP: usize = 5_000;
/// Band width used when a hub artifact's clique is sampled: each post
/// links to this many successors in sorted neighbor order, which keeps
/// the hub's posts connected without the quadratic edge count.
const HUB_BAND: usize = 16;

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            delta: DEFAULT_DELTA,
            p_min: DEFAULT_P_MIN,
            hub_cap: Some(DEFAULT_HUB_CAP),
        }
    }
}

/// A hub artifact whose clique expansion was sampled; the complete
/// neighbor list is kept so no provenance is lost.
#[derive(Debug, Clone)]
pub struct HubRecord {
    pub artifact: ArtifactId,
    /// Local post indices of every neighbor, ascending.
    pub posts: Vec<u32>,
}

/// The giant component projected onto its post vertices. Edges join
/// posts sharing at least one non-post artifact; each edge records which
/// artifacts induced it.
#[derive(Debug, Clone)]
pub struct PostProjection {
    /// Graph vertex indices of the giant component's posts, ascending.
    posts: Vec<u32>,
    /// Local (index into `posts`) pairs, u < v, sorted, deduplicated.
    edges: Vec<(u32, u32)>,
    /// Provenance pool: artifacts for edge i live at
    /// `pool[offsets[i]..offsets[i+1]]`.
    provenance_offsets: Vec<usize>,
    provenance_pool: Vec<ArtifactId>,
    hubs: Vec<HubRecord>,
}

impl PostProjection {
    pub fn post_count(&self) -> usize {
        self.posts.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Graph vertex indices of the projection's posts.
    pub fn posts(&self) -> &[u32] {
        &self.posts
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn provenance(&self, edge: usize) -> &[ArtifactId] {
        &self.provenance_pool[self.provenance_offsets[edge]..self.provenance_offsets[edge + 1]]
    }

    pub fn hubs(&self) -> &[HubRecord] {
        &self.hubs
    }

    /// Post key of a local vertex.
    pub fn post_key(&self, local: u32, graph: &ArtifactGraph) -> u64 {
        graph.vertex(self.posts[local as usize]).key
    }
}

/// Projects the giant component onto posts. Every non-post vertex of the
/// component contributes a clique over its post neighbors; artifacts with
/// more than `hub_cap` posts contribute a connectivity-preserving sampled
/// band instead, with the full neighbor set kept in `hubs`.
pub fn project_posts(
    graph: &ArtifactGraph,
    components: &ComponentSet,
    gc_id: u32,
    hub_cap: Option<usize>,
) -> Result<PostProjection, GcFilterError> {
    let mut posts: Vec<u32> = Vec::new();
    let mut artifacts: Vec<u32> = Vec::new();
    for v in 0..graph.vertex_count() as u32 {
        if components.label(v) != gc_id {
            continue;
        }
        if graph.vertex(v).kind == ArtifactKind::Post {
            posts.push(v);
        } else {
            artifacts.push(v);
        }
    }
    if posts.is_empty() {
        return Err(GcFilterError::NoPostsInGiant);
    }
    let local: HashMap<u32, u32> = posts
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u32))
        .collect();

    let adjacency = graph.adjacency();
    let mut triples: Vec<(u32, u32, ArtifactId)> = Vec::new();
    let mut hubs = Vec::new();
    for &a in &artifacts {
        // Neighbors of a non-post vertex are all posts, and all lie in
        // the same component.
        let mut neighbors: Vec<u32> = adjacency.neighbors(a).iter().map(|&p| local[&p]).collect();
        neighbors.sort_unstable();
        neighbors.dedup();
        let id = graph.vertex(a);
        let sampled = matches!(hub_cap, Some(cap) if neighbors.len() > cap);
        if sampled {
            hubs.push(HubRecord {
                artifact: id,
                posts: neighbors.clone(),
            });
            let n = neighbors.len();
            for (i, &u) in neighbors.iter().enumerate() {
                for step in 1..=HUB_BAND.min(n - 1) {
                    let v = neighbors[(i + step) % n];
                    triples.push((u.min(v), u.max(v), id));
                }
            }
        } else {
            for i in 0..neighbors.len() {
                for j in i + 1..neighbors.len() {
                    triples.push((neighbors[i], neighbors[j], id));
                }
            }
        }
    }
    triples.sort_unstable();
    triples.dedup();

    let mut edges = Vec::new();
    let mut provenance_offsets = vec![0usize];
    let mut provenance_pool = Vec::with_capacity(triples.len());
    for (u, v, artifact) in triples {
        if edges.last() != Some(&(u, v)) {
            if !edges.is_empty() {
                provenance_offsets.push(provenance_pool.len());
            }
            edges.push((u, v));
        }
        provenance_pool.push(artifact);
    }
    if !edges.is_empty() {
        provenance_offsets.push(provenance_pool.len());
    }

    hubs.sort_by_key(|h| h.artifact);
    Ok(PostProjection {
        posts,
        edges,
        provenance_offsets,
        provenance_pool,
        hubs,
    })
}

/// Edge partition from one filtering sweep, in projection-local indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeCut {
    pub retained: Vec<(u32, u32)>,
    pub removed: Vec<(u32, u32)>,
}

/// Scores every projection edge and cuts those with probability < delta.
/// The decision uses the full sweep's scores; nothing is removed
/// mid-sweep. Scores are computed once per unique post pair.
pub fn filter_edges(
    projection: &PostProjection,
    graph: &ArtifactGraph,
    classifier: &SameUserClassifier,
    provider: &(dyn EmbeddingProvider + Sync),
    texts: &HashMap<u64, Arc<str>>,
    delta: f64,
) -> Result<EdgeCut, GcFilterError> {
    assert!((0.0..=1.0).contains(&delta), "delta must lie in [0, 1]");
    // Embed each post once, in parallel, in deterministic order.
    let keys: Vec<u64> = projection
        .posts
        .iter()
        .map(|&v| graph.vertex(v).key)
        .collect();
    let embeddings: Vec<Box<[f32]>> = keys
        .par_iter()
        .map(|&key| {
            let text = texts
                .get(&key)
                .ok_or(SimilarityError::MissingText { post_key: key })?;
            provider
                .embed(key, text)
                .map(|v| crate::similarity::to_f32(&v))
        })
        .collect::<Result<_, _>>()?;

    let scores = score_edges(projection, |u, v| {
        classifier.same_user_probability(crate::similarity::cosine_f32(
            &embeddings[u as usize],
            &embeddings[v as usize],
        ))
    });
    Ok(split_by_scores(projection, &scores, delta))
}

/// Same sweep with an arbitrary per-edge probability function; the
/// testing seam for prescribed scores.
pub fn filter_edges_with(
    projection: &PostProjection,
    mut probability: impl FnMut(u32, u32) -> f64,
    delta: f64,
) -> EdgeCut {
    assert!((0.0..=1.0).contains(&delta), "delta must lie in [0, 1]");
    let scores: Vec<f64> = projection
        .edges
        .iter()
        .map(|&(u, v)| probability(u, v))
        .collect();
    split_by_scores(projection, &scores, delta)
}

fn score_edges(
    projection: &PostProjection,
    probability: impl Fn(u32, u32) -> f64 + Sync,
) -> Vec<f64> {
    projection
        .edges
        .par_iter()
        .map(|&(u, v)| probability(u, v))
        .collect()
}

fn split_by_scores(projection: &PostProjection, scores: &[f64], delta: f64) -> EdgeCut {
    let mut retained = Vec::new();
    let mut removed = Vec::new();
    for (&edge, &score) in projection.edges.iter().zip(scores) {
        if score < delta {
            removed.push(edge);
        } else {
            retained.push(edge);
        }
    }
    EdgeCut { retained, removed }
}

/// Where a final component id came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentOrigin {
    /// An untouched component from outside the giant component.
    Original,
    /// A piece of the filtered giant component.
    FromGc,
}

impl ComponentOrigin {
    fn label(self) -> &'static str {
        match self {
            ComponentOrigin::Original => "original",
            ComponentOrigin::FromGc => "from_gc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub post_key: u64,
    pub component: u32,
    pub origin: ComponentOrigin,
}

/// The final post → component mapping. Entries are sorted by post key;
/// component ids are dense, assigned to original components first (in
/// original label order) and then to giant-component pieces (in order of
/// each piece's first post).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentAssignment {
    entries: Vec<AssignmentEntry>,
    component_count: u32,
}

impl ComponentAssignment {
    pub fn entries(&self) -> &[AssignmentEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn component_count(&self) -> u32 {
        self.component_count
    }

    pub fn component_of(&self, post_key: u64) -> Option<u32> {
        self.entries
            .binary_search_by_key(&post_key, |e| e.post_key)
            .ok()
            .map(|i| self.entries[i].component)
    }

    /// Post count per component id.
    pub fn component_sizes(&self) -> Vec<u32> {
        let mut sizes = vec![0u32; self.component_count as usize];
        for e in &self.entries {
            sizes[e.component as usize] += 1;
        }
        sizes
    }

    fn from_entries(mut entries: Vec<AssignmentEntry>, component_count: u32) -> Self {
        entries.sort_unstable_by_key(|e| e.post_key);
        ComponentAssignment {
            entries,
            component_count,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), GcFilterError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "post_key\tcomponent\torigin")?;
        for e in &self.entries {
            writeln!(out, "{}\t{}\t{}", e.post_key, e.component, e.origin.label())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, GcFilterError> {
        let reader = BufReader::new(File::open(path)?);
        let bad = |line: usize, reason: &str| GcFilterError::Format {
            line,
            reason: reason.to_string(),
        };
        let mut entries = Vec::new();
        let mut max_component = None::<u32>;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            if lineno == 1 || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [key, component, origin] = fields.as_slice() else {
                return Err(bad(lineno, "expected 3 tab-separated fields"));
            };
            let entry = AssignmentEntry {
                post_key: key.parse().map_err(|_| bad(lineno, "bad post key"))?,
                component: component
                    .parse()
                    .map_err(|_| bad(lineno, "bad component id"))?,
                origin: match *origin {
                    "original" => ComponentOrigin::Original,
                    "from_gc" => ComponentOrigin::FromGc,
                    _ => return Err(bad(lineno, "unknown origin flag")),
                },
            };
            max_component = Some(max_component.map_or(entry.component, |m| m.max(entry.component)));
            entries.push(entry);
        }
        let count = max_component.map_or(0, |m| m + 1);
        Ok(ComponentAssignment::from_entries(entries, count))
    }
}

/// Labels every post: giant-component posts by the filtered projection's
/// components, everything else by its original component. Ids never
/// collide across the two sources, and every post appears exactly once.
pub fn relabel(
    projection: &PostProjection,
    retained: &[(u32, u32)],
    graph: &ArtifactGraph,
    components: &ComponentSet,
    gc_id: u32,
) -> ComponentAssignment {
    let mut entries = Vec::new();

    // Original components keep their grouping, renumbered densely in
    // label order.
    let mut original_ids: HashMap<u32, u32> = HashMap::new();
    for v in 0..graph.vertex_count() as u32 {
        if graph.vertex(v).kind != ArtifactKind::Post {
            continue;
        }
        let label = components.label(v);
        if label == gc_id {
            continue;
        }
        let next = original_ids.len() as u32;
        let id = *original_ids.entry(label).or_insert(next);
        entries.push(AssignmentEntry {
            post_key: graph.vertex(v).key,
            component: id,
            origin: ComponentOrigin::Original,
        });
    }

    let base = original_ids.len() as u32;
    let pieces = components_of_edges(projection.post_count(), retained.iter().copied());
    for (local, &vertex) in projection.posts.iter().enumerate() {
        entries.push(AssignmentEntry {
            post_key: graph.vertex(vertex).key,
            component: base + pieces.label(local as u32),
            origin: ComponentOrigin::FromGc,
        });
    }

    ComponentAssignment::from_entries(entries, base + pieces.len() as u32)
}

/// Fallback when no giant component exists: every post keeps its
/// original component, renumbered densely over post-bearing components.
pub fn assign_without_filtering(
    graph: &ArtifactGraph,
    components: &ComponentSet,
) -> ComponentAssignment {
    let mut ids: HashMap<u32, u32> = HashMap::new();
    let mut entries = Vec::new();
    for v in 0..graph.vertex_count() as u32 {
        if graph.vertex(v).kind != ArtifactKind::Post {
            continue;
        }
        let next = ids.len() as u32;
        let id = *ids.entry(components.label(v)).or_insert(next);
        entries.push(AssignmentEntry {
            post_key: graph.vertex(v).key,
            component: id,
            origin: ComponentOrigin::Original,
        });
    }
    ComponentAssignment::from_entries(entries, ids.len() as u32)
}

/// Before/after numbers for one filtering run. The filtered giant
/// proportion is reported against two denominators because they answer
/// different questions: `gc_proportion_after` uses the projection's post
/// universe, `gc_proportion_after_original` the original vertex count.
/// The post-share pair uses the same denominator (all posts) on both
/// sides, so their ratio is a fair reduction measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterMetrics {
    pub vertices: usize,
    pub posts: usize,
    pub components_before: usize,
    pub components_after: usize,
    pub component_increase: f64,
    pub gc_proportion_before: f64,
    pub gc_proportion_after: f64,
    pub gc_proportion_after_original: f64,
    pub gc_post_share_before: f64,
    pub gc_post_share_after: f64,
    pub projection_vertices: usize,
    pub projection_edges: usize,
    pub retained_edges: usize,
    pub removed_edges: usize,
    /// Wall-clock cost; excluded from serialized metrics so identical
    /// runs produce identical files.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

pub fn filter_metrics(
    graph: &ArtifactGraph,
    components: &ComponentSet,
    gc: &GiantComponentInfo,
    projection: &PostProjection,
    cut: &EdgeCut,
    assignment: &ComponentAssignment,
    elapsed_seconds: f64,
) -> FilterMetrics {
    let vertices = graph.vertex_count();
    let posts = graph
        .vertices()
        .iter()
        .filter(|a| a.kind == ArtifactKind::Post)
        .count();
    let components_before = components.len();
    let components_after = assignment.component_count() as usize;
    let component_increase = if components_before == 0 {
        0.0
    } else {
        (components_after as f64 - components_before as f64) / components_before as f64
    };
    let largest_piece = {
        let pieces = components_of_edges(projection.post_count(), cut.retained.iter().copied());
        pieces.sizes().iter().copied().max().unwrap_or(0) as usize
    };
    let largest_final = assignment
        .component_sizes()
        .iter()
        .copied()
        .max()
        .unwrap_or(0) as usize;
    FilterMetrics {
        vertices,
        posts,
        components_before,
        components_after,
        component_increase,
        gc_proportion_before: gc.proportion,
        gc_proportion_after: largest_piece as f64 / projection.post_count().max(1) as f64,
        gc_proportion_after_original: largest_piece as f64 / vertices.max(1) as f64,
        gc_post_share_before: projection.post_count() as f64 / posts.max(1) as f64,
        gc_post_share_after: largest_final as f64 / posts.max(1) as f64,
        projection_vertices: projection.post_count(),
        projection_edges: projection.edge_count(),
        retained_edges: cut.retained.len(),
        removed_edges: cut.removed.len(),
        elapsed_seconds,
    }
}

pub fn write_metrics(metrics: &FilterMetrics, path: &Path) -> Result<(), GcFilterError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, metrics).map_err(|e| GcFilterError::Format {
        line: 0,
        reason: e.to_string(),
    })?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// One-call driver: detect the giant component, project, score, cut,
/// relabel, measure. Returns the no-filtering fallback when the graph
/// has no giant component.
pub struct FilterRun {
    pub assignment: ComponentAssignment,
    pub metrics: Option<FilterMetrics>,
}

pub fn run_filter(
    graph: &ArtifactGraph,
    components: &ComponentSet,
    classifier: &SameUserClassifier,
    provider: &(dyn EmbeddingProvider + Sync),
    texts: &HashMap<u64, Arc<str>>,
    config: &FilterConfig,
) -> Result<FilterRun, GcFilterError> {
    let start = std::time::Instant::now();
    let Some(gc) = crate::graph::giant_component(components, config.p_min) else {
        return Ok(FilterRun {
            assignment: assign_without_filtering(graph, components),
            metrics: None,
        });
    };
    let projection = project_posts(graph, components, gc.component_id, config.hub_cap)?;
    let cut = filter_edges(
        &projection,
        graph,
        classifier,
        provider,
        texts,
        config.delta,
    )?;
    let assignment = relabel(
        &projection,
        &cut.retained,
        graph,
        components,
        gc.component_id,
    );
    let metrics = filter_metrics(
        graph,
        components,
        &gc,
        &projection,
        &cut,
        &assignment,
        start.elapsed().as_secs_f64(),
    );
    Ok(FilterRun {
        assignment,
        metrics: Some(metrics),
    })
}

/// Shared-state helper for scoring caches used by callers that filter
/// repeatedly with different deltas: scores depend only on the
/// projection and classifier, so they can be computed once.
pub struct ScoredProjection {
    scores: Vec<f64>,
}

impl ScoredProjection {
    pub fn new(
        projection: &PostProjection,
        graph: &ArtifactGraph,
        classifier: &SameUserClassifier,
        provider: &(dyn EmbeddingProvider + Sync),
        texts: &HashMap<u64, Arc<str>>,
    ) -> Result<Self, GcFilterError> {
        let embeddings: Vec<Box<[f32]>> = projection
            .posts
            .par_iter()
            .map(|&v| {
                let key = graph.vertex(v).key;
                let text = texts
                    .get(&key)
                    .ok_or(SimilarityError::MissingText { post_key: key })?;
                provider
                    .embed(key, text)
                    .map(|e| crate::similarity::to_f32(&e))
            })
            .collect::<Result<_, SimilarityError>>()?;
        let scores = score_edges(projection, |u, v| {
            classifier.same_user_probability(crate::similarity::cosine_f32(
                &embeddings[u as usize],
                &embeddings[v as usize],
            ))
        });
        Ok(ScoredProjection { scores })
    }

    pub fn cut(&self, projection: &PostProjection, delta: f64) -> EdgeCut {
        split_by_scores(projection, &self.scores, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_support::{dataset, record};
    use crate::graph::{build_graph, connected_components, giant_component};
    use crate::similarity::HashedNgramEmbedder;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    fn full_projection(ds: &crate::ingest::Dataset) -> (ArtifactGraph, ComponentSet, u32) {
        let graph = build_graph(ds);
        let components = connected_components(&graph);
        let gc = giant_component(&components, 0.0).unwrap();
        (graph, components, gc.component_id)
    }

    #[test]
    fn shared_phone_star_projects_to_triangle() {
        let ds = dataset(vec![
            record(1, 1, &[], &[777]),
            record(2, 2, &[], &[777]),
            record(3, 3, &[], &[777]),
        ]);
        let (graph, components, gc) = full_projection(&ds);
        let projection = project_posts(&graph, &components, gc, None).unwrap();
        assert_eq!(projection.post_count(), 3);
        assert_eq!(projection.edge_count(), 3);
        for e in 0..3 {
            assert_eq!(projection.provenance(e), &[ArtifactId::contact(777)]);
        }
    }

    #[test]
    fn chained_artifacts_project_to_a_path() {
        // 1-2 share an image, 2-3 a phone, 3-4 an image.
        let ds = dataset(vec![
            record(1, 1, &[0xaa], &[]),
            record(2, 2, &[0xaa], &[300]),
            record(3, 3, &[0xbb], &[300]),
            record(4, 4, &[0xbb], &[]),
        ]);
        let (graph, components, gc) = full_projection(&ds);
        let projection = project_posts(&graph, &components, gc, None).unwrap();
        assert_eq!(projection.post_count(), 4);
        let key = |local: u32| projection.post_key(local, &graph);
        let edges: BTreeSet<(u64, u64)> = projection
            .edges()
            .iter()
            .map(|&(u, v)| {
                let (a, b) = (key(u), key(v));
                (a.min(b), a.max(b))
            })
            .collect();
        assert_eq!(edges, BTreeSet::from([(1, 2), (2, 3), (3, 4)]));
    }

    #[test]
    fn multiple_shared_artifacts_merge_into_one_edge_with_both_in_provenance() {
        let ds = dataset(vec![
            record(1, 1, &[0x1, 0x2], &[]),
            record(2, 2, &[0x1, 0x2], &[]),
        ]);
        let (graph, components, gc) = full_projection(&ds);
        let projection = project_posts(&graph, &components, gc, None).unwrap();
        assert_eq!(projection.edge_count(), 1);
        let prov: BTreeSet<ArtifactId> = projection.provenance(0).iter().copied().collect();
        assert_eq!(
            prov,
            BTreeSet::from([ArtifactId::phash(1), ArtifactId::phash(2)])
        );
    }

    fn random_linked_dataset(n: usize, seed: u64) -> crate::ingest::Dataset {
        let mut rng = StdRng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let phashes: Vec<u64> = (0..rng.gen_range(0..3))
                    .map(|_| rng.gen_range(0..30))
                    .collect();
                let phones: Vec<u64> = (0..rng.gen_range(0..2))
                    .map(|_| rng.gen_range(0..12))
                    .collect();
                record(i as u64, i as u64, &phashes, &phones)
            })
            .collect();
        dataset(records)
    }

    /// O(P²) oracle: posts are adjacent in the projection iff some
    /// non-post vertex neighbors both in the artifact graph.
    #[test]
    fn projection_matches_common_neighbor_brute_force() {
        for seed in 0..10 {
            let ds = random_linked_dataset(60, seed);
            let graph = build_graph(&ds);
            let components = connected_components(&graph);
            // Project each component that has posts, compare per component.
            let adjacency = graph.adjacency();
            for comp in 0..components.len() as u32 {
                let posts: Vec<u32> = (0..graph.vertex_count() as u32)
                    .filter(|&v| {
                        components.label(v) == comp && graph.vertex(v).kind == ArtifactKind::Post
                    })
                    .collect();
                if posts.is_empty() {
                    continue;
                }
                let projection = project_posts(&graph, &components, comp, None).unwrap();
                let mut expected: BTreeSet<(u32, u32)> = BTreeSet::new();
                for i in 0..posts.len() {
                    for j in i + 1..posts.len() {
                        let (a, b) = (posts[i], posts[j]);
                        let na: BTreeSet<u32> = adjacency.neighbors(a).iter().copied().collect();
                        let shares = adjacency.neighbors(b).iter().any(|x| na.contains(x));
                        if shares {
                            expected.insert((i as u32, j as u32));
                        }
                    }
                }
                let got: BTreeSet<(u32, u32)> = projection.edges().iter().copied().collect();
                assert_eq!(got, expected, "seed {seed} component {comp}");
                // Provenance equals the full common-neighbor set.
                for (e, &(u, v)) in projection.edges().iter().enumerate() {
                    let na: BTreeSet<u32> = adjacency
                        .neighbors(posts[u as usize])
                        .iter()
                        .copied()
                        .collect();
                    let common: BTreeSet<ArtifactId> = adjacency
                        .neighbors(posts[v as usize])
                        .iter()
                        .filter(|x| na.contains(x))
                        .map(|&x| graph.vertex(x))
                        .collect();
                    let prov: BTreeSet<ArtifactId> =
                        projection.provenance(e).iter().copied().collect();
                    assert_eq!(prov, common);
                }
            }
        }
    }

    #[test]
    fn empty_giant_post_set_is_rejected() {
        // A graph can't normally produce a post-free component, so force
        // the situation by asking for a component id that holds no posts:
        // build one where the giant has posts, then check a crafted
        // single-artifact labeling. Simplest: two posts, distinct; ask to
        // project component of a contact-only view is impossible, so
        // verify the error path via a component set with a fabricated
        // label layout.
        let ds = dataset(vec![record(1, 1, &[0x5], &[])]);
        let graph = build_graph(&ds);
        // Labels: post -> 0, phash -> 1 (not actually connected in this
        // fabricated partition); component 1 has no posts.
        let components = ComponentSet::from_labels(&[0, 1]);
        assert!(matches!(
            project_posts(&graph, &components, 1, None),
            Err(GcFilterError::NoPostsInGiant)
        ));
    }

    /// Cycle 1-2-3-4 with prescribed probabilities at δ=0.5: {0.8, 0.9}
    /// stay, {0.1, 0.2} go, leaving two components.
    #[test]
    fn prescribed_scores_split_into_two_components() {
        let ds = dataset(vec![
            record(1, 1, &[0x12, 0x14], &[]),
            record(2, 2, &[0x12, 0x23], &[]),
            record(3, 3, &[0x23, 0x34], &[]),
            record(4, 4, &[0x34, 0x14], &[]),
        ]);
        let (graph, components, gc) = full_projection(&ds);
        let projection = project_posts(&graph, &components, gc, None).unwrap();
        assert_eq!(projection.edge_count(), 4);
        let key = |local: u32| projection.post_key(local, &graph);
        let cut = filter_edges_with(
            &projection,
            |u, v| {
                let pair = (key(u).min(key(v)), key(u).max(key(v)));
                match pair {
                    (1, 2) => 0.8,
                    (2, 3) => 0.9,
                    (3, 4) => 0.1,
                    (1, 4) => 0.2,
                    _ => unreachable!(),
                }
            },
            0.5,
        );
        assert_eq!(cut.retained.len(), 2);
        assert_eq!(cut.removed.len(), 2);
        let pieces = components_of_edges(4, cut.retained.iter().copied());
        assert_eq!(pieces.len(), 2);
        // {1,2,3} together, {4} alone.
        let label_of = |k: u64| {
            let local = projection
                .posts()
                .iter()
                .position(|&v| graph.vertex(v).key == k)
                .unwrap();
            pieces.label(local as u32)
        };
        assert_eq!(label_of(1), label_of(2));
        assert_eq!(label_of(2), label_of(3));
        assert_ne!(label_of(3), label_of(4));
    }

    #[test]
    fn delta_zero_removes_nothing() {
        let ds = random_linked_dataset(80, 3);
        let (graph, components, gc) = full_projection(&ds);
        let projection = project_posts(&graph, &components, gc, None).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let scores: Vec<f64> = (0..projection.edge_count()).map(|_| rng.gen()).collect();
        let cut = filter_edges_with(&projection, |_, _| scores[0].max(0.0), 0.0);
        assert!(cut.removed.is_empty());
        assert_eq!(cut.retained.len(), projection.edge_count());
    }

    #[test]
    fn removal_grows_with_delta_by_inclusion() {
        let ds = random_linked_dataset(120, 9);
        let (graph, components, gc) = full_projection(&ds);
        let projection = project_posts(&graph, &components, gc, None).unwrap();
        let mut rng = StdRng::seed_from_u64(2);
        let scores: Vec<f64> = (0..projection.edge_count()).map(|_| rng.gen()).collect();
        let score_fn = |edges: &[(u32, u32)], u: u32, v: u32| {
            let i = edges.iter().position(|&e| e == (u, v)).unwrap();
            scores[i]
        };
        let edges = projection.edges().to_vec();
        let low = filter_edges_with(&projection, |u, v| score_fn(&edges, u, v), 0.7);
        let high = filter_edges_with(&projection, |u, v| score_fn(&edges, u, v), 0.9);
        assert!(high.removed.len() >= low.removed.len());
        let low_set: BTreeSet<_> = low.removed.iter().collect();
        assert!(low.removed.iter().all(|e| low_set.contains(e)));
        let high_set: BTreeSet<_> = high.removed.iter().copied().collect();
        assert!(low.removed.iter().all(|e| high_set.contains(e)));
        // Partition property: retained and removed are disjoint and
        // together cover every edge.
        assert_eq!(
            low.retained.len() + low.removed.len(),
            projection.edge_count()
        );
    }

    #[test]
    fn relabel_counts_gc_pieces_plus_originals() {
        // GC: posts 1,2,3,4 in a path; non-GC: three isolated posts.
        let ds = dataset(vec![
            record(1, 1, &[0x12], &[]),
            record(2, 2, &[0x12, 0x23], &[]),
            record(3, 3, &[0x23, 0x34], &[]),
            record(4, 4, &[0x34], &[]),
            record(5, 10, &[], &[]),
            record(6, 11, &[], &[]),
            record(7, 12, &[], &[]),
        ]);
        let graph = build_graph(&ds);
        let components = connected_components(&graph);
        let gc = giant_component(&components, 0.05).unwrap();
        let projection = project_posts(&graph, &components, gc.component_id, None).unwrap();
        // Cut the middle edge: GC splits into {1,2} and {3,4}.
        let key = |local: u32| projection.post_key(local, &graph);
        let cut = filter_edges_with(
            &projection,
            |u, v| {
                if key(u).min(key(v)) == 2 && key(u).max(key(v)) == 3 {
                    0.1
                } else {
                    0.9
                }
            },
            0.7,
        );
        let assignment = relabel(
            &projection,
            &cut.retained,
            &graph,
            &components,
            gc.component_id,
        );
        assert_eq!(assignment.component_count(), 5); // 3 originals + 2 pieces
        assert_eq!(assignment.len(), 7);
        // Lossless: every post key exactly once.
        let keys: Vec<u64> = assignment.entries().iter().map(|e| e.post_key).collect();
        let expected: Vec<u64> = vec![1, 2, 3, 4, 10, 11, 12];
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, expected);
        // Pieces flagged as such.
        for e in assignment.entries() {
            let expected_origin = if e.post_key <= 4 {
                ComponentOrigin::FromGc
            } else {
                ComponentOrigin::Original
            };
            assert_eq!(e.origin, expected_origin, "post {}", e.post_key);
        }
        assert_eq!(
            assignment.component_of(1).unwrap(),
            assignment.component_of(2).unwrap()
        );
        assert_ne!(
            assignment.component_of(2).unwrap(),
            assignment.component_of(3).unwrap()
        );
    }

    #[test]
    fn no_removal_preserves_component_count() {
        let ds = random_linked_dataset(100, 17);
        let graph = build_graph(&ds);
        let components = connected_components(&graph);
        let Some(gc) = giant_component(&components, 0.05) else {
            panic!("fixture must have a giant component");
        };
        let projection = project_posts(&graph, &components, gc.component_id, None).unwrap();
        let cut = filter_edges_with(&projection, |_, _| 1.0, 0.7);
        assert!(cut.removed.is_empty());
        let assignment = relabel(
            &projection,
            &cut.retained,
            &graph,
            &components,
            gc.component_id,
        );
        assert_eq!(assignment.component_count() as usize, components.len());
    }

    #[test]
    fn lossless_for_every_delta_with_real_classifier() {
        let ds = random_linked_dataset(150, 23);
        let graph = build_graph(&ds);
        let components = connected_components(&graph);
        let gc = giant_component(&components, 0.0).unwrap();
        let projection = project_posts(&graph, &components, gc.component_id, None).unwrap();
        let classifier = SameUserClassifier { w0: -4.0, w1: 9.0 };
        let provider = HashedNgramEmbedder::new(64);
        let texts = dataset_texts(&ds);
        let all_posts: BTreeSet<u64> = ds.records.iter().map(|r| r.post_key).collect();
        for delta in [0.0, 0.3, 0.7, 1.0] {
            let cut =
                filter_edges(&projection, &graph, &classifier, &provider, &texts, delta).unwrap();
            let assignment = relabel(
                &projection,
                &cut.retained,
                &graph,
                &components,
                gc.component_id,
            );
            let keys: BTreeSet<u64> = assignment.entries().iter().map(|e| e.post_key).collect();
            assert_eq!(keys, all_posts, "delta {delta}");
            assert_eq!(assignment.len(), all_posts.len(), "delta {delta}");
        }
    }

    fn dataset_texts(ds: &crate::ingest::Dataset) -> HashMap<u64, Arc<str>> {
        ds.records
            .iter()
            .map(|r| (r.post_key, r.post_text.clone()))
            .collect()
    }

    #[test]
    fn missing_text_error_names_the_post() {
        let ds = dataset(vec![record(1, 41, &[], &[9]), record(2, 42, &[], &[9])]);
        let (graph, components, gc) = full_projection(&ds);
        let projection = project_posts(&graph, &components, gc, None).unwrap();
        let classifier = SameUserClassifier { w0: 0.0, w1: 1.0 };
        let provider = HashedNgramEmbedder::new(16);
        let mut texts = dataset_texts(&ds);
        texts.remove(&42);
        let err =
            filter_edges(&projection, &graph, &classifier, &provider, &texts, 0.5).unwrap_err();
        assert!(err.to_string().contains("42"), "{err}");
    }

    #[test]
    fn hub_cap_keeps_connectivity_and_records_full_neighbors() {
        // One contact shared by 60 posts; cap at 10 forces sampling.
        let records: Vec<_> = (0..60).map(|i| record(i, i, &[], &[5])).collect();
        let ds = dataset(records);
        let (graph, components, gc) = full_projection(&ds);
        let exact = project_posts(&graph, &components, gc, None).unwrap();
        assert_eq!(exact.edge_count(), 60 * 59 / 2);
        assert!(exact.hubs().is_empty());

        let capped = project_posts(&graph, &components, gc, Some(10)).unwrap();
        assert!(capped.edge_count() < exact.edge_count());
        assert_eq!(capped.hubs().len(), 1);
        assert_eq!(capped.hubs()[0].artifact, ArtifactId::contact(5));
        assert_eq!(capped.hubs()[0].posts.len(), 60);
        // The sampled band still joins all 60 posts into one piece.
        let pieces = components_of_edges(capped.post_count(), capped.edges().iter().copied());
        assert_eq!(pieces.len(), 1);
    }

    #[test]
    fn assignment_file_roundtrips() {
        let ds = random_linked_dataset(40, 31);
        let graph = build_graph(&ds);
        let components = connected_components(&graph);
        let assignment = assign_without_filtering(&graph, &components);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("assignment.tsv");
        assignment.write(&path).unwrap();
        let back = ComponentAssignment::read(&path).unwrap();
        assert_eq!(back, assignment);
    }

    #[test]
    fn metrics_show_identity_when_nothing_removed() {
        let ds = random_linked_dataset(90, 41);
        let graph = build_graph(&ds);
        let components = connected_components(&graph);
        let gc = giant_component(&components, 0.0).unwrap();
        let projection = project_posts(&graph, &components, gc.component_id, None).unwrap();
        let cut = filter_edges_with(&projection, |_, _| 1.0, 0.7);
        let assignment = relabel(
            &projection,
            &cut.retained,
            &graph,
            &components,
            gc.component_id,
        );
        let m = filter_metrics(
            &graph,
            &components,
            &gc,
            &projection,
            &cut,
            &assignment,
            0.0,
        );
        assert_eq!(m.component_increase, 0.0);
        assert_eq!(m.removed_edges, 0);
        assert_eq!(m.components_before, m.components_after);
    }

    #[test]
    fn run_filter_without_giant_keeps_original_grouping() {
        let ds = dataset(vec![
            record(1, 1, &[], &[]),
            record(2, 2, &[], &[]),
            record(3, 3, &[], &[]),
        ]);
        let graph = build_graph(&ds);
        let components = connected_components(&graph);
        let classifier = SameUserClassifier { w0: 0.0, w1: 1.0 };
        let provider = HashedNgramEmbedder::new(16);
        let texts = dataset_texts(&ds);
        let config = FilterConfig {
            delta: 0.7,
            p_min: 0.5, // nothing reaches half the graph
            hub_cap: None,
        };
        let run = run_filter(&graph, &components, &classifier, &provider, &texts, &config).unwrap();
        assert!(run.metrics.is_none());
        assert_eq!(run.assignment.component_count(), 3);
    }

    #[test]
    fn scored_projection_matches_filter_edges_at_each_delta() {
        let ds = random_linked_dataset(100, 57);
        let graph = build_graph(&ds);
        let components = connected_components(&graph);
        let gc = giant_component(&components, 0.0).unwrap();
        let projection = project_posts(&graph, &components, gc.component_id, None).unwrap();
        let classifier = SameUserClassifier { w0: -4.0, w1: 9.0 };
        let provider = HashedNgramEmbedder::new(64);
        let texts = dataset_texts(&ds);
        let scored =
            ScoredProjection::new(&projection, &graph, &classifier, &provider, &texts).unwrap();
        for delta in [0.2, 0.5, 0.8] {
            let a = scored.cut(&projection, delta);
            let b =
                filter_edges(&projection, &graph, &classifier, &provider, &texts, delta).unwrap();
            assert_eq!(a, b);
        }
    }
}
