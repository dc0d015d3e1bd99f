//! Text similarity and the same-user classifier.
//!
//! Posts are embedded as unit-norm vectors; the cosine between two post
//! embeddings is the single feature of a logistic classifier that
//! estimates the probability both posts come from the same user. Training
//! pairs are labeled from graph structure alone: posts sharing a small
//! connected component count as same-user, posts from different
//! components as different-user.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ArtifactGraph, ArtifactKind, ComponentSet};

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("failed to read embedding file: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad embedding file at line {line}: {reason}")]
    BadEmbeddingFile { line: usize, reason: String },
    #[error("no precomputed embedding for post key {post_key}")]
    MissingEmbedding { post_key: u64 },
    #[error("no post text available for post key {post_key}")]
    MissingText { post_key: u64 },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot build training pairs: {0}")]
    InsufficientTrainingData(String),
    #[error("classifier file error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// 64-bit FNV-1a. Hand-rolled so hashes are identical across platforms
/// and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// How an embedding was produced; persisted next to classifier weights so
/// a saved model is only applied to compatible features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProviderSpec {
    HashedNgram { dim: usize },
    Precomputed { dim: usize, path: PathBuf },
}

impl ProviderSpec {
    pub fn dim(&self) -> usize {
        match self {
            ProviderSpec::HashedNgram { dim } => *dim,
            ProviderSpec::Precomputed { dim, .. } => *dim,
        }
    }
}

/// Maps a post to a unit-norm vector.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embed(&self, post_key: u64, text: &str) -> Result<Vec<f64>, SimilarityError>;
    fn spec(&self) -> ProviderSpec;
}

/// Character n-gram embedding via signed feature hashing. No model files:
/// n-grams of 2..=4 bytes are FNV-hashed into `dim` buckets with a sign
/// bit, then L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    dim: usize,
}

pub const DEFAULT_EMBEDDING_DIM: usize = 512;

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        HashedNgramEmbedder::new(DEFAULT_EMBEDDING_DIM)
    }
}

impl HashedNgramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashedNgramEmbedder { dim }
    }

    fn fallback(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[0] = 1.0;
        v
    }
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _post_key: u64, text: &str) -> Result<Vec<f64>, SimilarityError> {
        let bytes = text.trim().as_bytes();
        if bytes.is_empty() {
            return Ok(self.fallback());
        }
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for n in 2..=4usize {
            if bytes.len() < n {
                break;
            }
            for gram in bytes.windows(n) {
                let h = fnv1a64(gram);
                let bucket = (h % self.dim as u64) as usize;
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                v[bucket] += sign;
                any = true;
            }
        }
        if !any {
            return Ok(self.fallback());
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(self.fallback());
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        Ok(v)
    }

    fn spec(&self) -> ProviderSpec {
        ProviderSpec::HashedNgram { dim: self.dim }
    }
}

/// Embeddings computed elsewhere, loaded from a TSV of
/// `post_key<TAB>x0<TAB>x1...`. Vectors are re-normalized on load.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbedder {
    dim: usize,
    path: PathBuf,
    map: HashMap<u64, Vec<f64>>,
}

impl PrecomputedEmbedder {
    pub fn load(path: &Path) -> Result<Self, SimilarityError> {
        let reader = BufReader::new(File::open(path)?);
        let mut map = HashMap::new();
        let mut dim = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let key: u64 = fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| {
                SimilarityError::BadEmbeddingFile {
                    line: lineno,
                    reason: "missing or non-integer post key".to_string(),
                }
            })?;
            let mut vec = Vec::new();
            for f in fields {
                let x: f64 = f.parse().map_err(|_| SimilarityError::BadEmbeddingFile {
                    line: lineno,
                    reason: format!("bad float {f:?}"),
                })?;
                vec.push(x);
            }
            if vec.is_empty() {
                return Err(SimilarityError::BadEmbeddingFile {
                    line: lineno,
                    reason: "vector has no components".to_string(),
                });
            }
            match dim {
                None => dim = Some(vec.len()),
                Some(d) if d != vec.len() => {
                    return Err(SimilarityError::BadEmbeddingFile {
                        line: lineno,
                        reason: format!("vector length {} != {}", vec.len(), d),
                    })
                }
                Some(_) => {}
            }
            let norm = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in vec.iter_mut() {
                    *x /= norm;
                }
            }
            map.insert(key, vec);
        }
        let dim = dim.ok_or_else(|| SimilarityError::BadEmbeddingFile {
            line: 0,
            reason: "file holds no vectors".to_string(),
        })?;
        Ok(PrecomputedEmbedder {
            dim,
            path: path.to_path_buf(),
            map,
        })
    }
}

impl EmbeddingProvider for PrecomputedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, post_key: u64, _text: &str) -> Result<Vec<f64>, SimilarityError> {
        self.map
            .get(&post_key)
            .cloned()
            .ok_or(SimilarityError::MissingEmbedding { post_key })
    }

    fn spec(&self) -> ProviderSpec {
        ProviderSpec::Precomputed {
            dim: self.dim,
            path: self.path.clone(),
        }
    }
}

/// Cosine similarity, clamped into [-1, 1] against rounding drift.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine over mismatched dimensions");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine over f32-stored vectors with f64 accumulation. Bulk caches
/// (one embedding per giant-component post) store f32 to halve memory
/// at million-ad scale; the rounding is orders of magnitude below the
/// classifier's decision noise.
pub fn cosine_f32(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine over mismatched dimensions");
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Narrows an embedding for bulk storage.
pub fn to_f32(v: &[f64]) -> Box<[f32]> {
    v.iter().map(|&x| x as f32).collect()
}

/// A labeled post pair, identified by post keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: u64,
    pub b: u64,
    pub same_user: bool,
}

/// The output of pair generation, with bookkeeping about scaling.
#[derive(Debug, Clone)]
pub struct TrainingPairs {
    pub pairs: Vec<LabeledPair>,
    pub requested_pos: usize,
    pub requested_neg: usize,
    pub actual_pos: usize,
    pub actual_neg: usize,
    /// True when supply forced fewer pairs than requested.
    pub scaled_down: bool,
}

pub const DEFAULT_POSITIVE_PAIRS: usize = 1_000;
pub const DEFAULT_NEGATIVE_PAIRS: usize = 9_000;

/// Draws same-user pairs from multi-post components outside the giant
/// component and different-user pairs across distinct components.
/// Components are weighted by how many pairs they can supply. When total
/// supply of positives is below `n_pos`, every available positive pair is
/// used and the negative count shrinks to keep the requested ratio.
pub fn generate_training_pairs(
    graph: &ArtifactGraph,
    components: &ComponentSet,
    exclude_component: Option<u32>,
    n_pos: usize,
    n_neg: usize,
    rng: &mut impl Rng,
) -> Result<TrainingPairs, SimilarityError> {
    assert!(n_pos > 0 && n_neg > 0, "pair counts must be positive");
    // Posts per component, ordered by component id then vertex index.
    let mut by_component: Vec<(u32, Vec<u64>)> = Vec::new();
    {
        let mut grouped: HashMap<u32, Vec<u64>> = HashMap::new();
        for (idx, artifact) in graph.vertices().iter().enumerate() {
            if artifact.kind != ArtifactKind::Post {
                continue;
            }
            let label = components.label(idx as u32);
            if Some(label) == exclude_component {
                continue;
            }
            grouped.entry(label).or_default().push(artifact.key);
        }
        by_component.extend(grouped);
        by_component.sort_unstable_by_key(|(label, _)| *label);
    }

    let total_posts: usize = by_component.iter().map(|(_, p)| p.len()).sum();
    if by_component.len() < 2 {
        return Err(SimilarityError::InsufficientTrainingData(format!(
            "need posts in at least 2 components outside the giant component, found {}",
            by_component.len()
        )));
    }

    let multi: Vec<&(u32, Vec<u64>)> = by_component.iter().filter(|(_, p)| p.len() >= 2).collect();
    let capacity_pos: u128 = multi
        .iter()
        .map(|(_, p)| {
            let n = p.len() as u128;
            n * (n - 1) / 2
        })
        .sum();
    if capacity_pos == 0 {
        return Err(SimilarityError::InsufficientTrainingData(
            "no component outside the giant component holds 2 or more posts".to_string(),
        ));
    }

    let (actual_pos, actual_neg, scaled_down) = if capacity_pos < n_pos as u128 {
        let pos = capacity_pos as usize;
        let neg = ((pos as u128 * n_neg as u128) / n_pos as u128).max(1) as usize;
        (pos, neg, true)
    } else {
        (n_pos, n_neg, false)
    };

    let mut pairs = Vec::with_capacity(actual_pos + actual_neg);

    if scaled_down {
        // Too few to sample: enumerate every positive pair.
        for (_, posts) in &multi {
            for i in 0..posts.len() {
                for j in i + 1..posts.len() {
                    pairs.push(LabeledPair {
                        a: posts[i],
                        b: posts[j],
                        same_user: true,
                    });
                }
            }
        }
    } else {
        // Weighted choice of component by pair supply, then a uniform
        // distinct pair inside it.
        let weights: Vec<u128> = multi
            .iter()
            .map(|(_, p)| {
                let n = p.len() as u128;
                n * (n - 1) / 2
            })
            .collect();
        let total_weight: u128 = weights.iter().sum();
        for _ in 0..actual_pos {
            let mut t = rng.gen_range(0..total_weight);
            let mut chosen = 0;
            for (ci, w) in weights.iter().enumerate() {
                if t < *w {
                    chosen = ci;
                    break;
                }
                t -= w;
            }
            let posts = &multi[chosen].1;
            let i = rng.gen_range(0..posts.len());
            let mut j = rng.gen_range(0..posts.len() - 1);
            if j >= i {
                j += 1;
            }
            pairs.push(LabeledPair {
                a: posts[i.min(j)],
                b: posts[i.max(j)],
                same_user: true,
            });
        }
    }

    // Negatives: uniform post, then uniform post outside its component
    // (exact, by skipping the first component's block).
    let flat: Vec<(usize, u64)> = by_component
        .iter()
        .enumerate()
        .flat_map(|(ci, (_, posts))| posts.iter().map(move |&k| (ci, k)))
        .collect();
    let starts: Vec<usize> = {
        let mut acc = 0;
        by_component
            .iter()
            .map(|(_, p)| {
                let s = acc;
                acc += p.len();
                s
            })
            .collect()
    };
    for _ in 0..actual_neg {
        let i1 = rng.gen_range(0..total_posts);
        let (c1, k1) = flat[i1];
        let c1_size = by_component[c1].1.len();
        let mut r = rng.gen_range(0..total_posts - c1_size);
        if r >= starts[c1] {
            r += c1_size;
        }
        let (_, k2) = flat[r];
        pairs.push(LabeledPair {
            a: k1.min(k2),
            b: k1.max(k2),
            same_user: false,
        });
    }

    Ok(TrainingPairs {
        pairs,
        requested_pos: n_pos,
        requested_neg: n_neg,
        actual_pos,
        actual_neg,
        scaled_down,
    })
}

/// Turns labeled key pairs into (cosine, label) feature rows, computing
/// each post's embedding once.
pub fn pair_features(
    pairs: &[LabeledPair],
    texts: &HashMap<u64, Arc<str>>,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<(f64, bool)>, SimilarityError> {
    let mut cache: HashMap<u64, Vec<f64>> = HashMap::new();
    let embed = |key: u64, cache: &mut HashMap<u64, Vec<f64>>| -> Result<(), SimilarityError> {
        if cache.contains_key(&key) {
            return Ok(());
        }
        let text = texts
            .get(&key)
            .ok_or(SimilarityError::MissingText { post_key: key })?;
        cache.insert(key, provider.embed(key, text)?);
        Ok(())
    };
    let mut rows = Vec::with_capacity(pairs.len());
    for pair in pairs {
        embed(pair.a, &mut cache)?;
        embed(pair.b, &mut cache)?;
        rows.push((cosine(&cache[&pair.a], &cache[&pair.b]), pair.same_user));
    }
    Ok(rows)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Two-parameter logistic model over cosine similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SameUserClassifier {
    pub w0: f64,
    pub w1: f64,
}

impl SameUserClassifier {
    /// P(same user | cosine).
    pub fn same_user_probability(&self, cos: f64) -> f64 {
        sigmoid(self.w0 + self.w1 * cos)
    }

    /// The cosine at which the predicted probability crosses 0.5, when
    /// the model is not flat.
    pub fn decision_boundary(&self) -> Option<f64> {
        (self.w1.abs() > 1e-12).then(|| -self.w0 / self.w1)
    }
}

/// Knobs for Newton training.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Rescale cap on the weight infinity norm; hitting it flags
    /// (near-)perfect separation of the classes.
    pub weight_cap: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            weight_cap: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub classifier: SameUserClassifier,
    pub iterations: usize,
    pub converged: bool,
    /// True when weights diverged toward perfect separation and were
    /// rescaled to the cap, direction preserved.
    pub separation_capped: bool,
    pub log_loss: f64,
}

fn log_loss(w: (f64, f64), rows: &[(f64, bool)]) -> f64 {
    let mut total = 0.0;
    for &(x, y) in rows {
        let z = w.0 + w.1 * x;
        // log(1 + e^-|z|) + max(0, -yz) form keeps this finite.
        let yz = if y { z } else { -z };
        total += (1.0 + (-yz.abs()).exp()).ln() + (-yz).max(0.0);
    }
    total / rows.len() as f64
}

/// Fits the logistic model by damped Newton iteration. Converges when the
/// gradient infinity norm drops under tolerance; diverging weights are
/// rescaled once onto the cap and training stops there.
pub fn train_classifier(
    rows: &[(f64, bool)],
    options: TrainOptions,
) -> Result<TrainOutcome, SimilarityError> {
    let n_pos = rows.iter().filter(|(_, y)| *y).count();
    if n_pos == 0 || n_pos == rows.len() {
        return Err(SimilarityError::InsufficientTrainingData(format!(
            "training needs both classes, got {n_pos} positive of {} rows",
            rows.len()
        )));
    }
    let n = rows.len() as f64;
    let mut w = (0.0f64, 0.0f64);
    let mut converged = false;
    let mut capped = false;
    let mut iterations = 0;

    for iter in 0..options.max_iterations {
        iterations = iter + 1;
        // Gradient and Hessian of mean log loss.
        let (mut g0, mut g1) = (0.0, 0.0);
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
        for &(x, y) in rows {
            let p = sigmoid(w.0 + w.1 * x);
            let err = p - if y { 1.0 } else { 0.0 };
            g0 += err;
            g1 += err * x;
            let s = p * (1.0 - p);
            h00 += s;
            h01 += s * x;
            h11 += s * x * x;
        }
        g0 /= n;
        g1 /= n;
        h00 /= n;
        h01 /= n;
        h11 /= n;

        if g0.abs().max(g1.abs()) < options.gradient_tolerance {
            converged = true;
            break;
        }

        let det = h00 * h11 - h01 * h01;
        let (dir0, dir1) = if det.abs() < 1e-300 {
            // Degenerate curvature: fall back to plain gradient descent.
            (-g0, -g1)
        } else {
            (-(h11 * g0 - h01 * g1) / det, -(h00 * g1 - h01 * g0) / det)
        };

        // Backtracking damping: halve the step until loss improves.
        let base = log_loss(w, rows);
        let mut step = 1.0;
        let mut next = w;
        for _ in 0..40 {
            next = (w.0 + step * dir0, w.1 + step * dir1);
            if log_loss(next, rows) <= base {
                break;
            }
            step *= 0.5;
        }
        w = next;

        let inf = w.0.abs().max(w.1.abs());
        if inf > options.weight_cap {
            // Scaling the whole vector keeps the decision boundary while
            // holding probabilities away from exact 0/1.
            let k = options.weight_cap / inf;
            w = (w.0 * k, w.1 * k);
            capped = true;
            break;
        }
    }

    Ok(TrainOutcome {
        classifier: SameUserClassifier { w0: w.0, w1: w.1 },
        iterations,
        converged,
        separation_capped: capped,
        log_loss: log_loss(w, rows),
    })
}

/// Stratified split: the positive and negative rows are each split by
/// `train_fraction`, preserving class balance on both sides.
#[allow(clippy::type_complexity)]
pub fn train_eval_split(
    rows: &[(f64, bool)],
    train_fraction: f64,
    rng: &mut impl Rng,
) -> (Vec<(f64, bool)>, Vec<(f64, bool)>) {
    assert!(
        (0.0..=1.0).contains(&train_fraction),
        "train fraction must lie in [0, 1]"
    );
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for positive in [true, false] {
        let mut class: Vec<(f64, bool)> = rows
            .iter()
            .copied()
            .filter(|(_, y)| *y == positive)
            .collect();
        // Fisher-Yates under the caller's rng keeps the split seeded.
        for i in (1..class.len()).rev() {
            let j = rng.gen_range(0..=i);
            class.swap(i, j);
        }
        let cut = (class.len() as f64 * train_fraction).round() as usize;
        train.extend_from_slice(&class[..cut.min(class.len())]);
        eval.extend_from_slice(&class[cut.min(class.len())..]);
    }
    (train, eval)
}

/// Confusion-derived quality numbers at one probability threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Sweeps thresholds 0.00, 0.01, ..., 1.00 over held-out rows.
pub fn threshold_curve(
    classifier: &SameUserClassifier,
    rows: &[(f64, bool)],
) -> Vec<ThresholdPoint> {
    let scored: Vec<(f64, bool)> = rows
        .iter()
        .map(|&(x, y)| (classifier.same_user_probability(x), y))
        .collect();
    (0..=100)
        .map(|i| {
            let threshold = f64::from(i) / 100.0;
            let (mut tp, mut fp, mut tn, mut fal_n) = (0usize, 0usize, 0usize, 0usize);
            for &(p, y) in &scored {
                match (p >= threshold, y) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, false) => tn += 1,
                    (false, true) => fal_n += 1,
                }
            }
            let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let precision = div(tp, tp + fp);
            let recall = div(tp, tp + fal_n);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ThresholdPoint {
                threshold,
                accuracy: div(tp + tn, scored.len()),
                precision,
                recall,
                f1,
                false_positives: fp,
                false_negatives: fal_n,
            }
        })
        .collect()
}

/// Accuracy at threshold 0.5, the headline eval number.
pub fn accuracy(classifier: &SameUserClassifier, rows: &[(f64, bool)]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let hits = rows
        .iter()
        .filter(|&&(x, y)| (classifier.same_user_probability(x) >= 0.5) == y)
        .count();
    hits as f64 / rows.len() as f64
}

/// Everything needed to reuse a trained model later: weights, the
/// embedding provider they were fitted against, and eval bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierFile {
    pub classifier: SameUserClassifier,
    pub provider: ProviderSpec,
    pub trained_rows: usize,
    pub eval_rows: usize,
    pub eval_accuracy: f64,
    pub converged: bool,
    pub separation_capped: bool,
}

impl ClassifierFile {
    pub fn save(&self, path: &Path) -> Result<(), SimilarityError> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SimilarityError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

pub fn write_threshold_curve(
    points: &[ThresholdPoint],
    path: &Path,
) -> Result<(), SimilarityError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "threshold\taccuracy\tprecision\trecall\tf1")?;
    for p in points {
        writeln!(
            out,
            "{:.2}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            p.threshold, p.accuracy, p.precision, p.recall, p.f1
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_support::{dataset, record};
    use crate::graph::{build_graph, connected_components};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fnv1a64_matches_published_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let embedder = HashedNgramEmbedder::default();
        for text in [
            "hello world",
            "a",
            "ab",
            "sweet girl new in town call now",
            "☀️ unicode text with émojis 🌙",
            &"x".repeat(5000),
        ] {
            let v = embedder.embed(0, text).unwrap();
            assert_eq!(v.len(), 512);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-9, "norm {norm} for {text:?}");
        }
    }

    #[test]
    fn blank_text_maps_to_first_axis() {
        let embedder = HashedNgramEmbedder::new(8);
        for text in ["", "   ", "\t\n  "] {
            let v = embedder.embed(0, text).unwrap();
            assert_eq!(v[0], 1.0);
            assert!(v[1..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn identical_texts_have_cosine_one() {
        let embedder = HashedNgramEmbedder::default();
        let a = embedder.embed(1, "call 555-0100 tonight").unwrap();
        let b = embedder.embed(2, "call 555-0100 tonight").unwrap();
        assert!((cosine(&a, &b) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn unrelated_texts_score_below_near_duplicates() {
        let embedder = HashedNgramEmbedder::default();
        let base = embedder
            .embed(1, "new in town sweet and discreet call me tonight")
            .unwrap();
        let near = embedder
            .embed(2, "new in town sweet and discreet call me today")
            .unwrap();
        let far = embedder
            .embed(3, "完全に別の言語で書かれたテキスト")
            .unwrap();
        assert!(cosine(&base, &near) > cosine(&base, &far));
        assert!(cosine(&base, &near) > 0.8);
    }

    #[test]
    fn cosine_stays_clamped() {
        let a = vec![1e-200, 1e-200];
        assert!(cosine(&a, &a) <= 1.0);
        let b = vec![-1e-200, -1e-200];
        assert!(cosine(&a, &b) >= -1.0);
    }

    #[test]
    fn precomputed_roundtrip_and_missing_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        std::fs::write(&path, "7\t3.0\t4.0\n9\t0.0\t1.0\n").unwrap();
        let embedder = PrecomputedEmbedder::load(&path).unwrap();
        assert_eq!(embedder.dim(), 2);
        let v = embedder.embed(7, "ignored").unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
        let err = embedder.embed(8, "ignored").unwrap_err();
        assert!(err.to_string().contains("8"), "error names the key: {err}");
    }

    #[test]
    fn precomputed_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        std::fs::write(&path, "1\t1.0\t0.0\n2\t1.0\n").unwrap();
        assert!(matches!(
            PrecomputedEmbedder::load(&path),
            Err(SimilarityError::BadEmbeddingFile { line: 2, .. })
        ));
    }

    /// Graph with components: {p1,p2,p3 via contact 100}, {p4,p5 via
    /// contact 200}, {p6}, {p7}. No giant exclusion.
    fn pair_fixture() -> (ArtifactGraph, ComponentSet) {
        let ds = dataset(vec![
            record(1, 1, &[], &[100]),
            record(2, 2, &[], &[100]),
            record(3, 3, &[], &[100]),
            record(4, 4, &[], &[200]),
            record(5, 5, &[], &[200]),
            record(6, 6, &[], &[]),
            record(7, 7, &[], &[]),
        ]);
        let graph = build_graph(&ds);
        let components = connected_components(&graph);
        (graph, components)
    }

    #[test]
    fn positive_pairs_share_component_negative_pairs_do_not() {
        let (graph, components) = pair_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = generate_training_pairs(&graph, &components, None, 50, 150, &mut rng).unwrap();
        let comp_of = |key: u64| {
            components.label(graph.index_of(crate::graph::ArtifactId::post(key)).unwrap())
        };
        for pair in &out.pairs {
            if pair.same_user {
                assert_eq!(comp_of(pair.a), comp_of(pair.b));
            } else {
                assert_ne!(comp_of(pair.a), comp_of(pair.b));
            }
            assert_ne!(pair.a, pair.b);
        }
    }

    #[test]
    fn scarce_positives_scale_both_classes_down() {
        // Supply: C(3,2) + C(2,2) = 4 positive pairs available.
        let (graph, components) = pair_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = generate_training_pairs(&graph, &components, None, 1000, 9000, &mut rng).unwrap();
        assert!(out.scaled_down);
        assert_eq!(out.actual_pos, 4);
        assert_eq!(out.actual_neg, 36); // 4 * 9000 / 1000
        assert_eq!(out.pairs.len(), 40);
        assert_eq!(out.pairs.iter().filter(|p| p.same_user).count(), 4);
    }

    #[test]
    fn exact_supply_without_scaling() {
        let (graph, components) = pair_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = generate_training_pairs(&graph, &components, None, 4, 36, &mut rng).unwrap();
        assert!(!out.scaled_down);
        assert_eq!(out.actual_pos, 4);
        assert_eq!(out.actual_neg, 36);
    }

    #[test]
    fn no_multi_post_component_is_an_error() {
        let ds = dataset(vec![record(1, 1, &[], &[]), record(2, 2, &[], &[])]);
        let graph = build_graph(&ds);
        let components = connected_components(&graph);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = generate_training_pairs(&graph, &components, None, 10, 90, &mut rng).unwrap_err();
        assert!(matches!(err, SimilarityError::InsufficientTrainingData(_)));
    }

    #[test]
    fn excluding_the_giant_component_drops_its_posts() {
        let (graph, components) = pair_fixture();
        // The 3-post component is the largest; treat it as the giant.
        let giant = (0..components.len() as u32)
            .max_by_key(|&c| components.sizes()[c as usize])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out =
            generate_training_pairs(&graph, &components, Some(giant), 1, 9, &mut rng).unwrap();
        let excluded: Vec<u64> = vec![1, 2, 3];
        for pair in &out.pairs {
            assert!(!excluded.contains(&pair.a) && !excluded.contains(&pair.b));
        }
    }

    #[test]
    fn pair_generation_is_deterministic_per_seed() {
        let (graph, components) = pair_fixture();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            generate_training_pairs(&graph, &components, None, 4, 30, &mut rng)
                .unwrap()
                .pairs
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    fn separable_rows() -> Vec<(f64, bool)> {
        let mut rows = Vec::new();
        for i in 0..200 {
            let jitter = (i % 10) as f64 * 0.004;
            rows.push((0.88 + jitter, true));
            rows.push((0.08 + jitter, false));
        }
        rows
    }

    #[test]
    fn separable_classes_give_confident_probabilities() {
        // Wide margin: the gradient vanishes (all points confidently
        // classified) before the weights reach the cap, so training
        // converges normally with a boundary between the clusters.
        let out = train_classifier(&separable_rows(), TrainOptions::default()).unwrap();
        let c = &out.classifier;
        assert!(c.same_user_probability(0.9) > 0.99);
        assert!(c.same_user_probability(0.1) < 0.01);
        let boundary = c.decision_boundary().unwrap();
        assert!(boundary > 0.12 && boundary < 0.88, "boundary {boundary}");
    }

    #[test]
    fn narrow_separation_hits_the_weight_cap() {
        // Margin so thin that driving the gradient to tolerance would
        // need weights far past the cap: the divergence is detected,
        // the vector is rescaled onto the cap, and the boundary stays
        // between the clusters.
        let mut rows = Vec::new();
        for i in 0..200 {
            let jitter = (i % 10) as f64 * 0.0004;
            rows.push((0.520 + jitter, true));
            rows.push((0.460 + jitter, false));
        }
        let out = train_classifier(&rows, TrainOptions::default()).unwrap();
        assert!(out.separation_capped);
        assert!(!out.converged);
        let c = &out.classifier;
        let norm = c.w0.abs().max(c.w1.abs());
        assert!((norm - 50.0).abs() < 1e-9, "norm {norm}");
        let boundary = c.decision_boundary().unwrap();
        assert!(boundary > 0.463 && boundary < 0.521, "boundary {boundary}");
    }

    #[test]
    fn overlapping_classes_converge_to_stationary_weights() {
        // Deterministic interleaved features with class overlap.
        let mut rows = Vec::new();
        for i in 0..500 {
            let t = (i as f64) / 500.0;
            rows.push((0.35 + 0.55 * t, true));
            rows.push((0.05 + 0.55 * t, false));
        }
        let out = train_classifier(&rows, TrainOptions::default()).unwrap();
        assert!(out.converged, "stalled after {} iterations", out.iterations);
        assert!(!out.separation_capped);
        // Optimality oracle: the gradient of the loss vanishes at the
        // returned weights.
        let (mut g0, mut g1) = (0.0, 0.0);
        for &(x, y) in &rows {
            let p = out.classifier.same_user_probability(x);
            let err = p - if y { 1.0 } else { 0.0 };
            g0 += err;
            g1 += err * x;
        }
        g0 /= rows.len() as f64;
        g1 /= rows.len() as f64;
        assert!(g0.abs() < 1e-6 && g1.abs() < 1e-6, "gradient ({g0}, {g1})");
        assert!(out.classifier.w1 > 0.0, "higher cosine must raise P(same)");
    }

    #[test]
    fn single_class_training_fails() {
        let rows = vec![(0.5, true), (0.6, true)];
        assert!(matches!(
            train_classifier(&rows, TrainOptions::default()),
            Err(SimilarityError::InsufficientTrainingData(_))
        ));
    }

    #[test]
    fn split_is_stratified() {
        let mut rows = Vec::new();
        for i in 0..100 {
            rows.push((i as f64 / 100.0, i % 10 == 0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (train, eval) = train_eval_split(&rows, 0.8, &mut rng);
        assert_eq!(train.len(), 80);
        assert_eq!(eval.len(), 20);
        assert_eq!(train.iter().filter(|(_, y)| *y).count(), 8);
        assert_eq!(eval.iter().filter(|(_, y)| *y).count(), 2);
    }

    #[test]
    fn threshold_curve_covers_the_unit_interval() {
        let out = train_classifier(&separable_rows(), TrainOptions::default()).unwrap();
        let curve = threshold_curve(&out.classifier, &separable_rows());
        assert_eq!(curve.len(), 101);
        assert_eq!(curve[0].threshold, 0.0);
        assert_eq!(curve[100].threshold, 1.0);
        // Threshold 0 accepts everything: recall 1, precision = base rate.
        assert_eq!(curve[0].recall, 1.0);
        assert!((curve[0].precision - 0.5).abs() < 1e-12);
        // Separable data must admit a perfect threshold.
        assert!(curve.iter().any(|p| p.accuracy == 1.0));
    }

    #[test]
    fn classifier_file_roundtrips() {
        let file = ClassifierFile {
            classifier: SameUserClassifier { w0: -3.5, w1: 9.25 },
            provider: ProviderSpec::HashedNgram { dim: 512 },
            trained_rows: 8000,
            eval_rows: 2000,
            eval_accuracy: 0.97,
            converged: true,
            separation_capped: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classifier.json");
        file.save(&path).unwrap();
        let back = ClassifierFile::load(&path).unwrap();
        assert_eq!(back.classifier, file.classifier);
        assert_eq!(back.provider, file.provider);
        assert_eq!(back.eval_accuracy, file.eval_accuracy);
    }
}
