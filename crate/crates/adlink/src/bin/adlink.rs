//! Command-line front end. Every pipeline stage is its own subcommand so
//! a run can be resumed or repeated from any prior stage's files, and
//! `run` chains them all from one TOML config.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 stage
//! failure, 4 time limit exceeded.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use adlink::bcfilter::{
    approx_betweenness, bc_filter, benchmark, component_subgraph, write_benchmark, BcError,
    BcFilterConfig,
};
use adlink::gazetteer::read_mapping;
use adlink::gcfilter::{ComponentAssignment, FilterConfig};
use adlink::graph::{connected_components, giant_component, read_graph, ArtifactKind};
use adlink::ingest::{format_phash16, parse_records_from_path, Dataset};
use adlink::pipeline::{
    run_pipeline, stage_build_graph, stage_filter, stage_ingest, stage_locations, stage_train,
    PipelineConfig, PipelineError, TrainParams,
};
use adlink::report::{
    detail_report, write_detail_json, write_detail_matrix_tsv, write_summary_json,
    write_summary_tsv, LocationMapping, Region, SummaryOptions,
};
use adlink::similarity::{
    ClassifierFile, EmbeddingProvider, HashedNgramEmbedder, PrecomputedEmbedder, ProviderSpec,
};
use adlink::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(
    name = "adlink",
    version,
    about = "Link classified ads to posting entities via shared artifacts"
)]
struct Cli {
    /// Seed for every randomized step; overrides seeds from config files.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Config file: pipeline TOML for `run`, generator TOML for `synth`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, deduplicate, and summarize a raw dataset.
    Ingest(IngestArgs),
    /// Resolve raw locations against the gazetteer plus overlay.
    Locations(LocationsArgs),
    /// Build the artifact graph and report its components.
    BuildGraph(BuildGraphArgs),
    /// Self-label pairs outside the giant component and fit the
    /// same-user model.
    TrainClassifier(TrainArgs),
    /// Cut weak giant-component edges and write the final assignment.
    FilterGc(FilterArgs),
    /// Betweenness-centrality baseline: delete high-centrality vertices.
    BcFilter(BcArgs),
    /// Run the proposed filter and the baseline side by side.
    Benchmark(BenchmarkArgs),
    /// Generate a synthetic dataset with ground-truth entities.
    Synth(SynthArgs),
    /// Partner-facing summaries from a finished assignment.
    Report(ReportArgs),
    /// Execute every stage from the TOML config given via --config.
    Run,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Canonical deduplicated dataset (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Per-site summary table.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Keep only ads within this many days of the newest ad.
    #[arg(long)]
    window_days: Option<u32>,
}

#[derive(Args)]
struct LocationsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    gazetteer: PathBuf,
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Raw-location → canonical mapping (TSV).
    #[arg(long)]
    out: PathBuf,
    /// Frequency-ranked unresolved locations.
    #[arg(long)]
    unmatched: Option<PathBuf>,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Graph file.
    #[arg(long)]
    out: PathBuf,
    /// Vertex/edge/component statistics (JSON).
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Dataset supplying post text for embeddings.
    #[arg(long)]
    dataset: PathBuf,
    /// Classifier weights plus provenance (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Held-out threshold sweep (TSV).
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value_t = adlink::similarity::DEFAULT_POSITIVE_PAIRS)]
    n_pos: usize,
    #[arg(long, default_value_t = adlink::similarity::DEFAULT_NEGATIVE_PAIRS)]
    n_neg: usize,
    /// Minimum giant-component share; below it no component is excluded.
    #[arg(long, default_value_t = adlink::gcfilter::DEFAULT_P_MIN)]
    p_min: f64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Hashed n-gram embedding width.
    #[arg(long, default_value_t = adlink::similarity::DEFAULT_EMBEDDING_DIM, conflicts_with = "embeddings")]
    dim: usize,
    /// Precomputed embedding table (TSV: post_key then coordinates).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
    /// Dataset supplying post text for embeddings.
    #[arg(long)]
    dataset: PathBuf,
    /// Post → component assignment (TSV).
    #[arg(long)]
    out: PathBuf,
    /// Before/after filter metrics (JSON).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Same-user probability below which a projected edge is cut.
    #[arg(long, default_value_t = adlink::gcfilter::DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = adlink::gcfilter::DEFAULT_P_MIN)]
    p_min: f64,
    /// Posts-per-artifact bound before hub sampling kicks in; 0 disables.
    #[arg(long, default_value_t = adlink::gcfilter::DEFAULT_HUB_CAP)]
    hub_cap: usize,
}

#[derive(Args)]
struct BcArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Per-vertex centrality and removal flags (TSV).
    #[arg(long)]
    out: PathBuf,
    /// Fraction of giant-component vertices used as traversal sources.
    #[arg(long, default_value_t = adlink::bcfilter::DEFAULT_SAMPLE_FRACTION)]
    fraction: f64,
    /// Relative-centrality percentile at or above which vertices are
    /// deleted.
    #[arg(long, default_value_t = adlink::bcfilter::DEFAULT_PERCENTILE)]
    percentile: f64,
    /// Seconds before the estimate is abandoned.
    #[arg(long, default_value_t = adlink::bcfilter::DEFAULT_TIME_LIMIT_SECONDS)]
    time_limit: u64,
    /// Apply the percentile cutoff per artifact type instead of pooled.
    #[arg(long)]
    per_type: bool,
    #[arg(long, default_value_t = adlink::gcfilter::DEFAULT_P_MIN)]
    p_min: f64,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
    /// Comparison rows (TSV).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = adlink::gcfilter::DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = adlink::gcfilter::DEFAULT_P_MIN)]
    p_min: f64,
    #[arg(long, default_value_t = adlink::gcfilter::DEFAULT_HUB_CAP)]
    hub_cap: usize,
    #[arg(long, default_value_t = adlink::bcfilter::DEFAULT_SAMPLE_FRACTION)]
    fraction: f64,
    #[arg(long, default_value_t = adlink::bcfilter::DEFAULT_PERCENTILE)]
    percentile: f64,
    #[arg(long, default_value_t = adlink::bcfilter::DEFAULT_TIME_LIMIT_SECONDS)]
    time_limit: u64,
    #[arg(long)]
    per_type: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Generated dataset (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth post → entity table (TSV).
    #[arg(long)]
    truth: PathBuf,
    /// Built-in size profile; ignored when --config supplies a TOML.
    #[arg(long, default_value = "fixture")]
    profile: String,
}

#[derive(Args)]
struct ReportArgs {
    #[command(subcommand)]
    command: ReportCommand,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Rank components active in a region within the recency window.
    Summary(SummaryArgs),
    /// Expand one component into posts and a month-by-state matrix.
    Detail(DetailArgs),
}

#[derive(Args)]
struct SummaryArgs {
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Location mapping written by the locations stage.
    #[arg(long)]
    locations: PathBuf,
    /// State code (e.g. TX) or 5-digit county FIPS.
    #[arg(long)]
    region: String,
    /// Minimum in-window ads targeting the region.
    #[arg(long, default_value_t = 1)]
    min_frequency: u64,
    /// Minimum share of the component's in-window ads in the region.
    #[arg(long, default_value_t = 0.0)]
    min_proportion: f64,
    #[arg(long, default_value_t = adlink::report::DEFAULT_WINDOW_DAYS)]
    window_days: u32,
    /// Summary rows (TSV).
    #[arg(long)]
    out: PathBuf,
    /// Same rows as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct DetailArgs {
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    locations: PathBuf,
    /// Component id from the assignment/summary.
    #[arg(long)]
    component: u32,
    #[arg(long, default_value_t = adlink::report::DEFAULT_WINDOW_DAYS)]
    window_days: u32,
    /// Detail block (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Month-by-state matrix (TSV).
    #[arg(long)]
    matrix: Option<PathBuf>,
}

/// Errors carrying their process exit code.
enum CliError {
    /// Exit 2: bad flags, bad config, missing files at validation time.
    Config(String),
    /// Exit 3: a stage started and failed.
    Stage(String),
    /// Exit 4: a time limit expired.
    Timeout(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage(_) => 3,
            CliError::Timeout(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Stage(m) | CliError::Timeout(m) => m,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        match err {
            PipelineError::Config(_) => CliError::Config(err.to_string()),
            PipelineError::Stage { .. } => {
                // Render the chain: "stage X failed: <cause>".
                let mut message = err.to_string();
                let mut source = std::error::Error::source(&err);
                while let Some(cause) = source {
                    message.push_str(": ");
                    message.push_str(&cause.to_string());
                    source = cause.source();
                }
                CliError::Stage(message)
            }
        }
    }
}

fn stage_failure(stage: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Stage(format!("stage {stage} failed: {err}"))
}

/// Numeric flags are checked before any file is touched; a violation is
/// a config error (exit code 2), not a stage failure.
fn require_unit(name: &str, value: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} {value} outside [0, 1]")))
    }
}

fn require_fraction(name: &str, value: f64) -> Result<(), CliError> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} {value} outside (0, 1]")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: thread pool: {err}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Locations(args) => cmd_locations(args),
        Command::BuildGraph(args) => cmd_build_graph(args),
        Command::TrainClassifier(args) => cmd_train(args, seed),
        Command::FilterGc(args) => cmd_filter(args),
        Command::BcFilter(args) => cmd_bc_filter(args, seed),
        Command::Benchmark(args) => cmd_benchmark(args, seed),
        Command::Synth(args) => cmd_synth(args, seed, cli.config.as_deref()),
        Command::Report(args) => match args.command {
            ReportCommand::Summary(args) => cmd_report_summary(args),
            ReportCommand::Detail(args) => cmd_report_detail(args),
        },
        Command::Run => cmd_run(cli.config.as_deref(), seed),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let (dataset, _) = parse_records_from_path(path)
        .map_err(|e| stage_failure("ingest", format!("{}: {e}", path.display())))?;
    Ok(dataset)
}

fn provider_from_spec(
    spec: &ProviderSpec,
) -> Result<Box<dyn EmbeddingProvider + Send + Sync>, CliError> {
    match spec {
        ProviderSpec::HashedNgram { dim } => Ok(Box::new(HashedNgramEmbedder::new(*dim))),
        ProviderSpec::Precomputed { dim, path } => {
            let provider = PrecomputedEmbedder::load(path).map_err(|e| {
                CliError::Config(format!(
                    "classifier references embedding file {}: {e}",
                    path.display()
                ))
            })?;
            if provider.dim() != *dim {
                return Err(CliError::Config(format!(
                    "embedding file {} has dim {}, classifier expects {dim}",
                    path.display(),
                    provider.dim()
                )));
            }
            Ok(Box::new(provider))
        }
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    let (dataset, stats, duplicates) = stage_ingest(
        &args.input,
        args.window_days,
        &args.out,
        args.summary.as_deref(),
    )?;
    println!(
        "ingested {} ads ({} accepted, {} rejected, {} duplicate urls)",
        dataset.records.len(),
        stats.accepted,
        stats.rejected,
        duplicates
    );
    Ok(())
}

fn cmd_locations(args: LocationsArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.dataset)?;
    let mapping = stage_locations(
        &dataset,
        &args.gazetteer,
        args.overlay.as_deref(),
        &args.out,
        args.unmatched.as_deref(),
    )?;
    let resolved = mapping.len();
    println!("resolved {resolved} distinct raw locations");
    Ok(())
}

fn cmd_build_graph(args: BuildGraphArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.dataset)?;
    let (graph, components) = stage_build_graph(&dataset, Some(&args.out), args.stats.as_deref())?;
    println!(
        "graph: {} vertices, {} edges, {} components",
        graph.vertex_count(),
        graph.edge_count(),
        components.len()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, seed: Option<u64>) -> Result<(), CliError> {
    require_unit("--p-min", args.p_min)?;
    if !(args.train_fraction > 0.0 && args.train_fraction < 1.0) {
        return Err(CliError::Config(format!(
            "--train-fraction {} outside (0, 1)",
            args.train_fraction
        )));
    }
    let dataset = load_dataset(&args.dataset)?;
    let graph = read_graph(&args.graph).map_err(|e| stage_failure("train-classifier", e))?;
    let components = connected_components(&graph);
    let texts = dataset.text_index();
    let provider: Box<dyn EmbeddingProvider + Send + Sync> = match &args.embeddings {
        Some(path) => Box::new(
            PrecomputedEmbedder::load(path)
                .map_err(|e| CliError::Config(format!("embedding file {}: {e}", path.display())))?,
        ),
        None => Box::new(HashedNgramEmbedder::new(args.dim)),
    };
    let params = TrainParams {
        n_pos: args.n_pos,
        n_neg: args.n_neg,
        p_min: args.p_min,
        train_fraction: args.train_fraction,
        seed: seed.unwrap_or(0),
    };
    let file = stage_train(
        &graph,
        &components,
        &texts,
        provider.as_ref(),
        &params,
        &args.out,
        args.curve.as_deref(),
    )?;
    println!(
        "trained on {} rows, eval accuracy {:.4} over {} rows{}",
        file.trained_rows,
        file.eval_accuracy,
        file.eval_rows,
        if file.separation_capped {
            " (separable; weights capped)"
        } else {
            ""
        }
    );
    Ok(())
}

fn cmd_filter(args: FilterArgs) -> Result<(), CliError> {
    require_unit("--delta", args.delta)?;
    require_unit("--p-min", args.p_min)?;
    let dataset = load_dataset(&args.dataset)?;
    let graph = read_graph(&args.graph).map_err(|e| stage_failure("filter-gc", e))?;
    let components = connected_components(&graph);
    let file = ClassifierFile::load(&args.classifier).map_err(|e| stage_failure("filter-gc", e))?;
    let provider = provider_from_spec(&file.provider)?;
    let texts = dataset.text_index();
    let config = FilterConfig {
        delta: args.delta,
        p_min: args.p_min,
        hub_cap: (args.hub_cap > 0).then_some(args.hub_cap),
    };
    let run = stage_filter(
        &graph,
        &components,
        &file.classifier,
        provider.as_ref(),
        &texts,
        &config,
        &args.out,
        args.metrics.as_deref(),
    )?;
    match &run.metrics {
        Some(metrics) => println!(
            "filtered: {} edges cut of {}, components {} -> {}",
            metrics.removed_edges,
            metrics.projection_edges,
            metrics.components_before,
            metrics.components_after
        ),
        None => println!("no giant component above p_min; assignment written unfiltered"),
    }
    Ok(())
}

fn cmd_bc_filter(args: BcArgs, seed: Option<u64>) -> Result<(), CliError> {
    require_fraction("--fraction", args.fraction)?;
    require_unit("--percentile", args.percentile)?;
    require_unit("--p-min", args.p_min)?;
    let graph = read_graph(&args.graph).map_err(|e| stage_failure("bc-filter", e))?;
    let components = connected_components(&graph);
    let gc = giant_component(&components, args.p_min)
        .ok_or_else(|| stage_failure("bc-filter", "no giant component above p_min"))?;
    let subgraph = component_subgraph(&graph, &components, gc.component_id);
    let kinds: Vec<ArtifactKind> = subgraph
        .globals
        .iter()
        .map(|&g| graph.vertex(g).kind)
        .collect();
    let estimate = approx_betweenness(
        subgraph.globals.len(),
        &subgraph.edges,
        args.fraction,
        seed.unwrap_or(0),
        Some(Duration::from_secs(args.time_limit)),
    )
    .map_err(|e| match e {
        BcError::TimeLimit { .. } => CliError::Timeout(format!("bc-filter: {e}")),
        other => stage_failure("bc-filter", other),
    })?;
    let outcome = bc_filter(&subgraph, &kinds, &estimate, args.percentile, args.per_type);

    let write = || -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(&args.out)?);
        writeln!(out, "kind\tkey\tcentrality\tremoved")?;
        let removed: std::collections::HashSet<u32> = outcome.removed.iter().copied().collect();
        for (local, &global) in subgraph.globals.iter().enumerate() {
            let artifact = graph.vertex(global);
            let key = match artifact.kind {
                ArtifactKind::PHash => format_phash16(artifact.key),
                _ => artifact.key.to_string(),
            };
            writeln!(
                out,
                "{}\t{}\t{:.9}\t{}",
                artifact.kind.label(),
                key,
                estimate.values[local],
                u8::from(removed.contains(&(local as u32)))
            )?;
        }
        out.flush()
    };
    write().map_err(|e| stage_failure("bc-filter", e))?;
    println!(
        "removed {} of {} giant-component vertices; {} components remain{}",
        outcome.removed.len(),
        subgraph.globals.len(),
        outcome.remaining_components,
        if outcome.all_zero {
            " (all estimates zero; nothing removed)"
        } else {
            ""
        }
    );
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs, seed: Option<u64>) -> Result<(), CliError> {
    require_unit("--delta", args.delta)?;
    require_unit("--p-min", args.p_min)?;
    require_fraction("--fraction", args.fraction)?;
    require_unit("--percentile", args.percentile)?;
    let dataset = load_dataset(&args.dataset)?;
    let graph = read_graph(&args.graph).map_err(|e| stage_failure("benchmark", e))?;
    let components = connected_components(&graph);
    let file = ClassifierFile::load(&args.classifier).map_err(|e| stage_failure("benchmark", e))?;
    let provider = provider_from_spec(&file.provider)?;
    let texts = dataset.text_index();
    let filter_config = FilterConfig {
        delta: args.delta,
        p_min: args.p_min,
        hub_cap: (args.hub_cap > 0).then_some(args.hub_cap),
    };
    let bc_config = BcFilterConfig {
        sample_fraction: args.fraction,
        percentile: args.percentile,
        time_limit_seconds: args.time_limit,
        per_type: args.per_type,
        seed: seed.unwrap_or(0),
    };
    let rows = benchmark(
        &graph,
        &components,
        &file.classifier,
        provider.as_ref(),
        &texts,
        &filter_config,
        &bc_config,
    )
    .map_err(|e| stage_failure("benchmark", e))?;
    write_benchmark(&rows, &args.out).map_err(|e| stage_failure("benchmark", e))?;
    for row in &rows {
        println!(
            "{}: giant component -{:.2} points, components +{:.2}%, coverage {:.2}%{}",
            row.method,
            row.gc_reduction_pct,
            row.component_increase_pct,
            row.post_coverage_pct,
            if row.timed_out { " (timed out)" } else { "" }
        );
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs, seed: Option<u64>, config: Option<&Path>) -> Result<(), CliError> {
    let mut synth_config = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            SynthConfig::from_toml(&text).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => SynthConfig::by_name(&args.profile).ok_or_else(|| {
            CliError::Config(format!(
                "unknown profile {:?}; expected fixture, 100k, or 1m",
                args.profile
            ))
        })?,
    };
    if let Some(seed) = seed {
        synth_config.seed = seed;
    }
    let (dataset, truth) = generate(&synth_config).map_err(|e| stage_failure("synth", e))?;
    adlink::ingest::write_dataset(&dataset, &args.out).map_err(|e| stage_failure("synth", e))?;
    truth
        .write(&args.truth)
        .map_err(|e| stage_failure("synth", e))?;
    println!(
        "generated {} ads from {} entities (seed {})",
        dataset.records.len(),
        synth_config.n_entities,
        synth_config.seed
    );
    Ok(())
}

fn load_report_inputs(
    assignment: &Path,
    dataset: &Path,
    locations: &Path,
) -> Result<(ComponentAssignment, Dataset, LocationMapping), CliError> {
    let assignment =
        ComponentAssignment::read(assignment).map_err(|e| stage_failure("report", e))?;
    let dataset = load_dataset(dataset)?;
    let mapping = read_mapping(locations)
        .map_err(|e| stage_failure("report", format!("{}: {e}", locations.display())))?;
    Ok((assignment, dataset, mapping))
}

fn cmd_report_summary(args: SummaryArgs) -> Result<(), CliError> {
    let (assignment, dataset, mapping) =
        load_report_inputs(&args.assignment, &args.dataset, &args.locations)?;
    let region =
        Region::parse(&args.region, &mapping).map_err(|e| CliError::Config(e.to_string()))?;
    let options = SummaryOptions {
        region,
        min_frequency: args.min_frequency,
        min_proportion: args.min_proportion,
        window_days: args.window_days,
    };
    let rows = adlink::report::summary_report(&assignment, &dataset, &mapping, &options)
        .map_err(|e| stage_failure("report", e))?;
    write_summary_tsv(&rows, &args.out).map_err(|e| stage_failure("report", e))?;
    if let Some(path) = &args.json {
        write_summary_json(&rows, path).map_err(|e| stage_failure("report", e))?;
    }
    println!("{} components matched {}", rows.len(), args.region);
    Ok(())
}

fn cmd_report_detail(args: DetailArgs) -> Result<(), CliError> {
    let (assignment, dataset, mapping) =
        load_report_inputs(&args.assignment, &args.dataset, &args.locations)?;
    let block = detail_report(
        &assignment,
        &dataset,
        &mapping,
        args.component,
        args.window_days,
    )
    .map_err(|e| stage_failure("report", e))?;
    write_detail_json(&block, &args.out).map_err(|e| stage_failure("report", e))?;
    if let Some(path) = &args.matrix {
        write_detail_matrix_tsv(&block, path).map_err(|e| stage_failure("report", e))?;
    }
    println!(
        "component {}: {} in-window posts",
        args.component,
        block.posts.len()
    );
    Ok(())
}

fn cmd_run(config: Option<&Path>, seed: Option<u64>) -> Result<(), CliError> {
    let path =
        config.ok_or_else(|| CliError::Config("run requires --config <pipeline.toml>".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = seed {
        config.params.seed = seed;
    }
    let outcome = run_pipeline(&config)?;
    println!(
        "pipeline complete: {} artifacts under {}",
        outcome.artifacts.len(),
        config.output.dir.display()
    );
    if let Some(metrics) = &outcome.metrics {
        println!(
            "giant component share {:.4} -> {:.4}; components {} -> {}",
            metrics.gc_post_share_before,
            metrics.gc_post_share_after,
            metrics.components_before,
            metrics.components_after
        );
    }
    if let Some(rows) = outcome.report_rows {
        println!("report: {rows} summary rows");
    }
    Ok(())
}
