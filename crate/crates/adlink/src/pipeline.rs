//! Pipeline configuration and orchestration.
//!
//! One TOML config drives the whole run: ingest → locations →
//! build-graph → train-classifier → filter-gc → report. Every stage
//! writes its artifact before the next starts, each stage is also
//! invokable on its own from the prior stage's files, and a rerun with
//! the same config and inputs reproduces every artifact byte for byte.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gazetteer::{resolve_dataset, unmatched_report, LocationResolver};
use crate::gcfilter::{run_filter, write_metrics, FilterConfig, FilterRun};
use crate::graph::{build_graph, connected_components, graph_stats, ArtifactGraph, ComponentSet};
use crate::ingest::{
    dedupe_by_url, filter_window, parse_records_from_path, summarize, write_dataset, Dataset,
    IngestStats,
};
use crate::report::{
    summary_report, write_summary_json, write_summary_tsv, LocationMapping, Region, SummaryOptions,
    SummaryRow,
};
use crate::similarity::{
    accuracy, generate_training_pairs, pair_features, threshold_curve, train_classifier,
    train_eval_split, write_threshold_curve, ClassifierFile, EmbeddingProvider,
    HashedNgramEmbedder, PrecomputedEmbedder, TrainOptions, DEFAULT_EMBEDDING_DIM,
    DEFAULT_NEGATIVE_PAIRS, DEFAULT_POSITIVE_PAIRS,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn stage_err<E: std::error::Error + Send + Sync + 'static>(
    stage: &'static str,
) -> impl FnOnce(E) -> PipelineError {
    move |source| PipelineError::Stage {
        stage,
        source: Box::new(source),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub dataset: PathBuf,
    pub gazetteer: PathBuf,
    #[serde(default)]
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub delta: f64,
    pub p_min: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// 0 disables hub sampling.
    pub hub_cap: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// When set, ingest keeps only ads within this many days of the
    /// newest ad.
    pub window_days: Option<u32>,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig {
            delta: crate::gcfilter::DEFAULT_DELTA,
            p_min: crate::gcfilter::DEFAULT_P_MIN,
            n_pos: DEFAULT_POSITIVE_PAIRS,
            n_neg: DEFAULT_NEGATIVE_PAIRS,
            hub_cap: crate::gcfilter::DEFAULT_HUB_CAP,
            seed: 0,
            train_fraction: 0.8,
            window_days: None,
        }
    }
}

impl ParamsConfig {
    pub fn effective_hub_cap(&self) -> Option<usize> {
        (self.hub_cap > 0).then_some(self.hub_cap)
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            delta: self.delta,
            p_min: self.p_min,
            hub_cap: self.effective_hub_cap(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    HashedNgram {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Precomputed {
        path: PathBuf,
    },
}

fn default_dim() -> usize {
    DEFAULT_EMBEDDING_DIM
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::HashedNgram { dim: default_dim() }
    }
}

impl EmbeddingConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider + Send + Sync>, PipelineError> {
        match self {
            EmbeddingConfig::HashedNgram { dim } => {
                if *dim == 0 {
                    return Err(PipelineError::Config(
                        "embedding dim must be positive".into(),
                    ));
                }
                Ok(Box::new(HashedNgramEmbedder::new(*dim)))
            }
            EmbeddingConfig::Precomputed { path } => {
                Ok(Box::new(PrecomputedEmbedder::load(path).map_err(|e| {
                    PipelineError::Config(format!("embedding file: {e}"))
                })?))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub region: String,
    #[serde(default = "default_min_frequency")]
    pub min_frequency: u64,
    #[serde(default)]
    pub min_proportion: f64,
    #[serde(default = "default_window_days")]
    pub window_days: u32,
}

fn default_min_frequency() -> u64 {
    1
}

fn default_window_days() -> u32 {
    crate::report::DEFAULT_WINDOW_DAYS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub report: Option<ReportConfig>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks paths and ranges before any work starts.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let exists = |label: &str, path: &Path| {
            if path.exists() {
                Ok(())
            } else {
                Err(PipelineError::Config(format!(
                    "{label} path {} does not exist",
                    path.display()
                )))
            }
        };
        exists("input dataset", &self.input.dataset)?;
        exists("gazetteer", &self.input.gazetteer)?;
        if let Some(overlay) = &self.input.overlay {
            exists("overlay", overlay)?;
        }
        if let EmbeddingConfig::Precomputed { path } = &self.embedding {
            exists("precomputed embedding", path)?;
        }
        let in_unit = |label: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{label} {v} outside [0, 1]")))
            }
        };
        in_unit("delta", self.params.delta)?;
        in_unit("p_min", self.params.p_min)?;
        if !(self.params.train_fraction > 0.0 && self.params.train_fraction < 1.0) {
            return Err(PipelineError::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.params.train_fraction
            )));
        }
        if self.params.n_pos == 0 || self.params.n_neg == 0 {
            return Err(PipelineError::Config(
                "n_pos and n_neg must be positive".into(),
            ));
        }
        if let Some(report) = &self.report {
            if report.region.trim().is_empty() {
                return Err(PipelineError::Config("report region is empty".into()));
            }
            in_unit("report min_proportion", report.min_proportion)?;
        }
        Ok(())
    }
}

/// Fixed artifact names under the output directory.
pub struct ArtifactPaths {
    pub dataset: PathBuf,
    pub ingest_summary: PathBuf,
    pub mapping: PathBuf,
    pub unmatched: PathBuf,
    pub graph: PathBuf,
    pub graph_stats: PathBuf,
    pub classifier: PathBuf,
    pub curve: PathBuf,
    pub assignment: PathBuf,
    pub metrics: PathBuf,
    pub report_tsv: PathBuf,
    pub report_json: PathBuf,
}

impl ArtifactPaths {
    pub fn under(dir: &Path) -> Self {
        ArtifactPaths {
            dataset: dir.join("dataset.jsonl"),
            ingest_summary: dir.join("ingest.tsv"),
            mapping: dir.join("locations.tsv"),
            unmatched: dir.join("unmatched.tsv"),
            graph: dir.join("graph.tsv"),
            graph_stats: dir.join("graph.json"),
            classifier: dir.join("classifier.json"),
            curve: dir.join("curve.tsv"),
            assignment: dir.join("assignment.tsv"),
            metrics: dir.join("metrics.json"),
            report_tsv: dir.join("report_summary.tsv"),
            report_json: dir.join("report_summary.json"),
        }
    }
}

/// Parses, deduplicates, optionally windows, and re-serializes the
/// dataset.
pub fn stage_ingest(
    input: &Path,
    window_days: Option<u32>,
    out_dataset: &Path,
    out_summary: Option<&Path>,
) -> Result<(Dataset, IngestStats, u64), PipelineError> {
    let err = stage_err("ingest");
    let (dataset, stats) = parse_records_from_path(input).map_err(err)?;
    let (dataset, duplicates) = dedupe_by_url(dataset);
    let dataset = match window_days {
        Some(days) => filter_window(dataset, days, None),
        None => dataset,
    };
    write_dataset(&dataset, out_dataset).map_err(stage_err("ingest"))?;
    if let Some(path) = out_summary {
        fs::write(path, summarize(&dataset).to_tsv()).map_err(stage_err("ingest"))?;
    }
    Ok((dataset, stats, duplicates))
}

/// Resolves every distinct raw location and reports what stayed
/// unmatched.
pub fn stage_locations(
    dataset: &Dataset,
    gazetteer: &Path,
    overlay: Option<&Path>,
    out_mapping: &Path,
    out_unmatched: Option<&Path>,
) -> Result<LocationMapping, PipelineError> {
    let resolver = LocationResolver::load(gazetteer, overlay).map_err(stage_err("locations"))?;
    let rows = resolve_dataset(dataset, &resolver);
    crate::gazetteer::write_mapping(&rows, out_mapping).map_err(stage_err("locations"))?;
    if let Some(path) = out_unmatched {
        let report = unmatched_report(dataset, &resolver);
        fs::write(path, report.to_tsv()).map_err(stage_err("locations"))?;
    }
    Ok(rows.into_iter().collect())
}

pub fn stage_build_graph(
    dataset: &Dataset,
    out_graph: Option<&Path>,
    out_stats: Option<&Path>,
) -> Result<(ArtifactGraph, ComponentSet), PipelineError> {
    let graph = build_graph(dataset);
    let components = connected_components(&graph);
    if let Some(path) = out_graph {
        crate::graph::write_graph(&graph, path).map_err(stage_err("build-graph"))?;
    }
    if let Some(path) = out_stats {
        let stats = graph_stats(&graph, &components);
        let json = serde_json::to_string_pretty(&stats).map_err(stage_err("build-graph"))?;
        fs::write(path, json + "\n").map_err(stage_err("build-graph"))?;
    }
    Ok((graph, components))
}

#[derive(Debug, Clone, Copy)]
pub struct TrainParams {
    pub n_pos: usize,
    pub n_neg: usize,
    pub p_min: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Self-labels pairs from graph structure, trains the classifier, and
/// persists weights plus the held-out threshold curve.
pub fn stage_train(
    graph: &ArtifactGraph,
    components: &ComponentSet,
    texts: &HashMap<u64, Arc<str>>,
    provider: &(dyn EmbeddingProvider + Sync),
    params: &TrainParams,
    out_classifier: &Path,
    out_curve: Option<&Path>,
) -> Result<ClassifierFile, PipelineError> {
    let err = stage_err("train-classifier");
    let gc = crate::graph::giant_component(components, params.p_min);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let pairs = generate_training_pairs(
        graph,
        components,
        gc.map(|g| g.component_id),
        params.n_pos,
        params.n_neg,
        &mut rng,
    )
    .map_err(err)?;
    let rows =
        pair_features(&pairs.pairs, texts, provider).map_err(stage_err("train-classifier"))?;
    let (train_rows, eval_rows) = train_eval_split(&rows, params.train_fraction, &mut rng);
    let outcome = train_classifier(&train_rows, TrainOptions::default())
        .map_err(stage_err("train-classifier"))?;
    let eval_accuracy = accuracy(&outcome.classifier, &eval_rows);
    let file = ClassifierFile {
        classifier: outcome.classifier.clone(),
        provider: provider.spec(),
        trained_rows: train_rows.len(),
        eval_rows: eval_rows.len(),
        eval_accuracy,
        converged: outcome.converged,
        separation_capped: outcome.separation_capped,
    };
    file.save(out_classifier)
        .map_err(stage_err("train-classifier"))?;
    if let Some(path) = out_curve {
        let curve = threshold_curve(&outcome.classifier, &eval_rows);
        write_threshold_curve(&curve, path).map_err(stage_err("train-classifier"))?;
    }
    Ok(file)
}

/// Runs the giant-component filter and writes the assignment; metrics
/// are written only when a giant component existed to filter.
#[allow(clippy::too_many_arguments)]
pub fn stage_filter(
    graph: &ArtifactGraph,
    components: &ComponentSet,
    classifier: &crate::similarity::SameUserClassifier,
    provider: &(dyn EmbeddingProvider + Sync),
    texts: &HashMap<u64, Arc<str>>,
    config: &FilterConfig,
    out_assignment: &Path,
    out_metrics: Option<&Path>,
) -> Result<FilterRun, PipelineError> {
    let run = run_filter(graph, components, classifier, provider, texts, config)
        .map_err(stage_err("filter-gc"))?;
    run.assignment
        .write(out_assignment)
        .map_err(stage_err("filter-gc"))?;
    if let (Some(path), Some(metrics)) = (out_metrics, &run.metrics) {
        write_metrics(metrics, path).map_err(stage_err("filter-gc"))?;
    }
    Ok(run)
}

pub fn stage_report(
    assignment: &crate::gcfilter::ComponentAssignment,
    dataset: &Dataset,
    mapping: &LocationMapping,
    config: &ReportConfig,
    out_tsv: &Path,
    out_json: Option<&Path>,
) -> Result<Vec<SummaryRow>, PipelineError> {
    let err = stage_err("report");
    let region = Region::parse(&config.region, mapping).map_err(err)?;
    let options = SummaryOptions {
        region,
        min_frequency: config.min_frequency,
        min_proportion: config.min_proportion,
        window_days: config.window_days,
    };
    let rows =
        summary_report(assignment, dataset, mapping, &options).map_err(stage_err("report"))?;
    write_summary_tsv(&rows, out_tsv).map_err(stage_err("report"))?;
    if let Some(path) = out_json {
        write_summary_json(&rows, path).map_err(stage_err("report"))?;
    }
    Ok(rows)
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub artifacts: Vec<PathBuf>,
    pub metrics: Option<crate::gcfilter::FilterMetrics>,
    pub report_rows: Option<usize>,
}

/// Runs every stage in order under the config's output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    config.validate()?;
    fs::create_dir_all(&config.output.dir)
        .map_err(|e| PipelineError::Config(format!("cannot create output dir: {e}")))?;
    let paths = ArtifactPaths::under(&config.output.dir);
    let mut artifacts = Vec::new();

    let (dataset, _, _) = stage_ingest(
        &config.input.dataset,
        config.params.window_days,
        &paths.dataset,
        Some(&paths.ingest_summary),
    )?;
    artifacts.push(paths.dataset.clone());
    artifacts.push(paths.ingest_summary.clone());

    let mapping = stage_locations(
        &dataset,
        &config.input.gazetteer,
        config.input.overlay.as_deref(),
        &paths.mapping,
        Some(&paths.unmatched),
    )?;
    artifacts.push(paths.mapping.clone());
    artifacts.push(paths.unmatched.clone());

    let (graph, components) =
        stage_build_graph(&dataset, Some(&paths.graph), Some(&paths.graph_stats))?;
    artifacts.push(paths.graph.clone());
    artifacts.push(paths.graph_stats.clone());

    let texts = dataset.text_index();
    let provider = config.embedding.build()?;
    let train_params = TrainParams {
        n_pos: config.params.n_pos,
        n_neg: config.params.n_neg,
        p_min: config.params.p_min,
        train_fraction: config.params.train_fraction,
        seed: config.params.seed,
    };
    let classifier_file = stage_train(
        &graph,
        &components,
        &texts,
        provider.as_ref(),
        &train_params,
        &paths.classifier,
        Some(&paths.curve),
    )?;
    artifacts.push(paths.classifier.clone());
    artifacts.push(paths.curve.clone());

    let run = stage_filter(
        &graph,
        &components,
        &classifier_file.classifier,
        provider.as_ref(),
        &texts,
        &config.params.filter_config(),
        &paths.assignment,
        Some(&paths.metrics),
    )?;
    artifacts.push(paths.assignment.clone());
    if run.metrics.is_some() {
        artifacts.push(paths.metrics.clone());
    }

    let report_rows = match &config.report {
        Some(report_config) => {
            let rows = stage_report(
                &run.assignment,
                &dataset,
                &mapping,
                report_config,
                &paths.report_tsv,
                Some(&paths.report_json),
            )?;
            artifacts.push(paths.report_tsv.clone());
            artifacts.push(paths.report_json.clone());
            Some(rows.len())
        }
        None => None,
    };

    Ok(PipelineOutcome {
        artifacts,
        metrics: run.metrics,
        report_rows,
    })
}
