//! Betweenness-centrality baseline and the method benchmark.
//!
//! The alternative to classifier-driven edge cutting is structural:
//! estimate betweenness centrality over the giant component, normalize
//! per artifact type, and delete every vertex at or above a percentile
//! cutoff. Deleting vertices loses data — removed posts vanish from the
//! output — which is exactly the trade-off the benchmark quantifies
//! against the lossless filter.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{components_of_edges, Adjacency, ArtifactGraph, ArtifactKind, ComponentSet};

#[derive(Debug, Error)]
pub enum BcError {
    #[error("time limit exceeded after {completed} of {total} sources")]
    TimeLimit {
        completed: usize,
        total: usize,
        /// What was accumulated before the deadline; scaled by the
        /// completed fraction, usable as a degraded estimate.
        partial: Box<BcEstimate>,
    },
    #[error("no giant component above p_min; nothing to filter")]
    NoGiantComponent,
    #[error(transparent)]
    Filter(#[from] crate::gcfilter::GcFilterError),
    #[error("failed to write benchmark output: {0}")]
    Io(#[from] std::io::Error),
}

/// Knobs for the baseline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BcFilterConfig {
    /// Fraction of vertices used as traversal sources.
    pub sample_fraction: f64,
    /// Relative-value percentile at or above which vertices are deleted.
    pub percentile: f64,
    pub time_limit_seconds: u64,
    /// Percentile cutoff per artifact type instead of pooled.
    pub per_type: bool,
    pub seed: u64,
}

pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.4;
pub const DEFAULT_PERCENTILE: f64 = 0.90;
pub const DEFAULT_TIME_LIMIT_SECONDS: u64 = 86_400;

impl Default for BcFilterConfig {
    fn default() -> Self {
        BcFilterConfig {
            sample_fraction: DEFAULT_SAMPLE_FRACTION,
            percentile: DEFAULT_PERCENTILE,
            time_limit_seconds: DEFAULT_TIME_LIMIT_SECONDS,
            per_type: false,
            seed: 0,
        }
    }
}

/// Betweenness estimates for vertices 0..n of one (sub)graph.
#[derive(Debug, Clone)]
pub struct BcEstimate {
    pub values: Vec<f64>,
    /// The fraction actually sampled (completed sources / n).
    pub sample_fraction: f64,
    pub seed: u64,
}

/// Fixed number of accumulation blocks: sources are partitioned by index
/// into this many chunks, each summed sequentially, and the chunks are
/// merged in order. The result is identical for any worker count.
const ACCUMULATION_BLOCKS: usize = 64;

/// Brandes betweenness over a uniform source sample, scaled by the
/// inverse sampled fraction. Undirected: each unordered pair contributes
/// once. `sample_fraction` 1.0 reproduces exact betweenness.
pub fn approx_betweenness(
    n: usize,
    edges: &[(u32, u32)],
    sample_fraction: f64,
    seed: u64,
    time_limit: Option<Duration>,
) -> Result<BcEstimate, BcError> {
    assert!(
        sample_fraction > 0.0 && sample_fraction <= 1.0,
        "sample fraction must lie in (0, 1]"
    );
    if n == 0 {
        return Ok(BcEstimate {
            values: Vec::new(),
            sample_fraction,
            seed,
        });
    }
    let adjacency = Adjacency::from_edges(n, edges);
    let mut sources: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sources.shuffle(&mut rng);
    let k = ((sample_fraction * n as f64).ceil() as usize).clamp(1, n);
    sources.truncate(k);

    let started = Instant::now();
    let timed_out = AtomicBool::new(false);
    let block_size = k.div_ceil(ACCUMULATION_BLOCKS);
    let blocks: Vec<(Vec<f64>, usize)> = sources
        .par_chunks(block_size.max(1))
        .map(|chunk| {
            let mut acc = vec![0.0f64; n];
            let mut scratch = BrandesScratch::new(n);
            let mut completed = 0;
            for &s in chunk {
                if let Some(limit) = time_limit {
                    if timed_out.load(Ordering::Relaxed) || started.elapsed() >= limit {
                        timed_out.store(true, Ordering::Relaxed);
                        break;
                    }
                }
                brandes_from_source(&adjacency, s, &mut acc, &mut scratch);
                completed += 1;
            }
            (acc, completed)
        })
        .collect();

    let mut values = vec![0.0f64; n];
    let mut completed = 0;
    for (acc, done) in &blocks {
        for (v, a) in values.iter_mut().zip(acc) {
            *v += a;
        }
        completed += done;
    }
    let actual_fraction = completed as f64 / n as f64;
    // Halve for undirectedness, scale up for the unsampled sources.
    let scale = if completed == 0 {
        0.0
    } else {
        1.0 / (2.0 * actual_fraction)
    };
    for v in values.iter_mut() {
        *v *= scale;
    }
    let estimate = BcEstimate {
        values,
        sample_fraction: actual_fraction,
        seed,
    };
    if timed_out.into_inner() {
        return Err(BcError::TimeLimit {
            completed,
            total: k,
            partial: Box::new(estimate),
        });
    }
    Ok(estimate)
}

struct BrandesScratch {
    sigma: Vec<f64>,
    dist: Vec<i32>,
    delta: Vec<f64>,
    order: Vec<u32>,
    queue: VecDeque<u32>,
}

impl BrandesScratch {
    fn new(n: usize) -> Self {
        BrandesScratch {
            sigma: vec![0.0; n],
            dist: vec![-1; n],
            delta: vec![0.0; n],
            order: Vec::with_capacity(n),
            queue: VecDeque::new(),
        }
    }
}

fn brandes_from_source(
    adjacency: &Adjacency,
    s: u32,
    betweenness: &mut [f64],
    scratch: &mut BrandesScratch,
) {
    let BrandesScratch {
        sigma,
        dist,
        delta,
        order,
        queue,
    } = scratch;
    for v in order.drain(..) {
        sigma[v as usize] = 0.0;
        dist[v as usize] = -1;
        delta[v as usize] = 0.0;
    }
    sigma[s as usize] = 1.0;
    dist[s as usize] = 0;
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in adjacency.neighbors(v) {
            if dist[w as usize] < 0 {
                dist[w as usize] = dist[v as usize] + 1;
                queue.push_back(w);
            }
            if dist[w as usize] == dist[v as usize] + 1 {
                sigma[w as usize] += sigma[v as usize];
            }
        }
    }
    // Dependency accumulation in reverse BFS order; predecessors are the
    // neighbors one level closer to the source.
    for &w in order.iter().rev() {
        for &v in adjacency.neighbors(w) {
            if dist[v as usize] + 1 == dist[w as usize] {
                delta[v as usize] +=
                    sigma[v as usize] / sigma[w as usize] * (1.0 + delta[w as usize]);
            }
        }
        if w != s {
            betweenness[w as usize] += delta[w as usize];
        }
    }
}

/// One component of the artifact graph as a standalone local graph.
pub struct Subgraph {
    /// Local index → graph vertex index, ascending.
    pub globals: Vec<u32>,
    pub edges: Vec<(u32, u32)>,
}

pub fn component_subgraph(
    graph: &ArtifactGraph,
    components: &ComponentSet,
    component: u32,
) -> Subgraph {
    let globals: Vec<u32> = (0..graph.vertex_count() as u32)
        .filter(|&v| components.label(v) == component)
        .collect();
    let local: std::collections::HashMap<u32, u32> = globals
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u32))
        .collect();
    let edges = graph
        .edges()
        .iter()
        .filter(|(u, v)| local.contains_key(u) && local.contains_key(v))
        .map(|(u, v)| (local[u], local[v]))
        .collect();
    Subgraph { globals, edges }
}

/// What one BC filtering pass did to a subgraph.
#[derive(Debug, Clone)]
pub struct BcFilterOutcome {
    /// Removed local vertex indices, ascending.
    pub removed: Vec<u32>,
    /// Components of the subgraph after deletion; removed vertices are
    /// isolated singletons in this labeling.
    pub components: ComponentSet,
    /// Component count ignoring the removed singletons.
    pub remaining_components: usize,
    /// Cutoff(s) actually applied on relative values.
    pub cutoffs: Vec<(ArtifactKind, f64)>,
    /// True when every estimate was zero and nothing was removed.
    pub all_zero: bool,
}

/// Deletes subgraph vertices whose type-relative betweenness reaches the
/// percentile cutoff. Values are first divided by their artifact type's
/// maximum; the cutoff is the nearest-rank percentile over the pooled
/// relative values (or per type with `per_type`), and a value equal to
/// the cutoff is removed. Vertices with estimate exactly zero are never
/// deleted: no shortest path routes through them, so removing them
/// cannot break anything apart (this matters when zeros dominate and
/// drag the percentile cutoff down to 0).
pub fn bc_filter(
    subgraph: &Subgraph,
    kinds: &[ArtifactKind],
    estimate: &BcEstimate,
    percentile: f64,
    per_type: bool,
) -> BcFilterOutcome {
    assert!(
        percentile > 0.0 && percentile < 1.0,
        "percentile must lie in (0, 1)"
    );
    let n = subgraph.globals.len();
    assert_eq!(
        estimate.values.len(),
        n,
        "estimates must cover the subgraph"
    );
    assert_eq!(kinds.len(), n);

    if estimate.values.iter().all(|&v| v == 0.0) {
        let components = components_of_edges(n, subgraph.edges.iter().copied());
        return BcFilterOutcome {
            removed: Vec::new(),
            remaining_components: components.len(),
            components,
            cutoffs: Vec::new(),
            all_zero: true,
        };
    }

    let all_kinds = [
        ArtifactKind::Post,
        ArtifactKind::PHash,
        ArtifactKind::Contact,
    ];
    let mut max_by_kind = [0.0f64; 3];
    let kind_slot = |k: ArtifactKind| all_kinds.iter().position(|&x| x == k).unwrap();
    for (i, &kind) in kinds.iter().enumerate() {
        let slot = kind_slot(kind);
        max_by_kind[slot] = max_by_kind[slot].max(estimate.values[i]);
    }
    let relative: Vec<f64> = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let m = max_by_kind[kind_slot(kind)];
            if m == 0.0 {
                0.0
            } else {
                estimate.values[i] / m
            }
        })
        .collect();

    let nearest_rank = |values: &mut Vec<f64>| -> f64 {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = ((percentile * values.len() as f64).ceil() as usize).clamp(1, values.len());
        values[rank - 1]
    };

    let mut cutoffs = Vec::new();
    let removed: Vec<u32> = if per_type {
        let mut cutoff_by_slot = [f64::INFINITY; 3];
        for &kind in &all_kinds {
            let mut vals: Vec<f64> = kinds
                .iter()
                .enumerate()
                .filter(|(_, &k)| k == kind)
                .map(|(i, _)| relative[i])
                .collect();
            if !vals.is_empty() {
                let c = nearest_rank(&mut vals);
                cutoff_by_slot[kind_slot(kind)] = c;
                cutoffs.push((kind, c));
            }
        }
        (0..n as u32)
            .filter(|&v| {
                let i = v as usize;
                estimate.values[i] > 0.0 && relative[i] >= cutoff_by_slot[kind_slot(kinds[i])]
            })
            .collect()
    } else {
        let mut pooled = relative.clone();
        let cutoff = nearest_rank(&mut pooled);
        for &kind in &all_kinds {
            if kinds.contains(&kind) {
                cutoffs.push((kind, cutoff));
            }
        }
        (0..n as u32)
            .filter(|&v| {
                let i = v as usize;
                estimate.values[i] > 0.0 && relative[i] >= cutoff
            })
            .collect()
    };

    let removed_set: Vec<bool> = {
        let mut mask = vec![false; n];
        for &v in &removed {
            mask[v as usize] = true;
        }
        mask
    };
    let kept_edges = subgraph
        .edges
        .iter()
        .copied()
        .filter(|&(u, v)| !removed_set[u as usize] && !removed_set[v as usize]);
    let components = components_of_edges(n, kept_edges);
    // Removed vertices keep no edges, so each is its own component.
    let remaining_components = components.len() - removed.len();
    BcFilterOutcome {
        removed,
        components,
        remaining_components,
        cutoffs,
        all_zero: false,
    }
}

/// One line of the method comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    /// Percentage-point drop of the largest component's share of the
    /// original vertex count.
    pub gc_reduction_pct: f64,
    pub component_increase_pct: f64,
    /// Share of posts still present in the output.
    pub post_coverage_pct: f64,
    pub elapsed_seconds: f64,
    pub timed_out: bool,
}

/// Runs the classifier filter and the BC baseline on the same graph and
/// reports comparable rows. A BC time-limit overrun degrades to the
/// partial estimate and flags the row instead of dropping it.
#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    graph: &ArtifactGraph,
    components: &ComponentSet,
    classifier: &crate::similarity::SameUserClassifier,
    provider: &(dyn crate::similarity::EmbeddingProvider + Sync),
    texts: &std::collections::HashMap<u64, std::sync::Arc<str>>,
    filter_config: &crate::gcfilter::FilterConfig,
    bc_config: &BcFilterConfig,
) -> Result<Vec<BenchmarkRow>, BcError> {
    let gc = crate::graph::giant_component(components, filter_config.p_min)
        .ok_or(BcError::NoGiantComponent)?;
    let vertices = graph.vertex_count() as f64;
    let posts_total = graph
        .vertices()
        .iter()
        .filter(|a| a.kind == ArtifactKind::Post)
        .count() as f64;
    let components_before = components.len() as f64;
    let gc_share_before = gc.proportion;

    // Proposed method.
    let started = Instant::now();
    let run = crate::gcfilter::run_filter(
        graph,
        components,
        classifier,
        provider,
        texts,
        filter_config,
    )?;
    let proposed_elapsed = started.elapsed().as_secs_f64();
    let metrics = run
        .metrics
        .expect("giant component checked above, filtering must have run");
    let proposed = BenchmarkRow {
        method: format!("proposed delta={}", filter_config.delta),
        gc_reduction_pct: (gc_share_before - metrics.gc_proportion_after_original) * 100.0,
        component_increase_pct: metrics.component_increase * 100.0,
        post_coverage_pct: 100.0,
        elapsed_seconds: proposed_elapsed,
        timed_out: false,
    };

    // Baseline.
    let started = Instant::now();
    let subgraph = component_subgraph(graph, components, gc.component_id);
    let kinds: Vec<ArtifactKind> = subgraph
        .globals
        .iter()
        .map(|&v| graph.vertex(v).kind)
        .collect();
    let (estimate, timed_out) = match approx_betweenness(
        subgraph.globals.len(),
        &subgraph.edges,
        bc_config.sample_fraction,
        bc_config.seed,
        Some(Duration::from_secs(bc_config.time_limit_seconds)),
    ) {
        Ok(e) => (e, false),
        Err(BcError::TimeLimit { partial, .. }) => (*partial, true),
        Err(e) => return Err(e),
    };
    let outcome = bc_filter(
        &subgraph,
        &kinds,
        &estimate,
        bc_config.percentile,
        bc_config.per_type,
    );
    let bc_elapsed = started.elapsed().as_secs_f64();

    let removed_posts = outcome
        .removed
        .iter()
        .filter(|&&v| kinds[v as usize] == ArtifactKind::Post)
        .count() as f64;
    let largest_piece = outcome
        .components
        .sizes()
        .iter()
        .copied()
        .max()
        .unwrap_or(0) as f64;
    // Everything outside the giant component is untouched by both
    // methods, so the full-graph component count after BC filtering is
    // the original count, minus the giant, plus its surviving pieces.
    let bc_components_after = components_before - 1.0 + outcome.remaining_components as f64;
    let baseline = BenchmarkRow {
        method: format!(
            "bc percentile={} fraction={}",
            bc_config.percentile, bc_config.sample_fraction
        ),
        gc_reduction_pct: (gc_share_before - largest_piece / vertices) * 100.0,
        component_increase_pct: (bc_components_after - components_before) / components_before
            * 100.0,
        post_coverage_pct: (posts_total - removed_posts) / posts_total * 100.0,
        elapsed_seconds: bc_elapsed,
        timed_out,
    };

    Ok(vec![proposed, baseline])
}

pub fn write_benchmark(rows: &[BenchmarkRow], path: &Path) -> Result<(), BcError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "method\tgc_reduction_pct\tcomponent_increase_pct\tpost_coverage_pct\telapsed_s\ttimed_out"
    )?;
    for r in rows {
        writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.3}\t{}",
            r.method,
            r.gc_reduction_pct,
            r.component_increase_pct,
            r.post_coverage_pct,
            r.elapsed_seconds,
            r.timed_out
        )?;
    }
    out.flush()?;
    Ok(())
}
