//! End-to-end exercises of the `adlink` binary: every subcommand runs
//! once over a small generated dataset, and each documented exit code is
//! provoked deliberately (0 success, 2 config error, 3 stage failure,
//! 4 time limit).

use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::Output;
use std::sync::OnceLock;

fn adlink<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    std::process::Command::new(env!("CARGO_BIN_EXE_adlink"))
        .args(args)
        .output()
        .expect("spawn adlink")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("process exited with a code")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn assert_ok(output: &Output, what: &str) {
    assert_eq!(
        code(output),
        0,
        "{what} should succeed, stderr: {}",
        stderr_of(output)
    );
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// One shared workspace holding the artifacts of a full subcommand
/// chain; later tests reuse its graph and classifier.
struct Chain {
    _dir: tempfile::TempDir,
    dataset: PathBuf,
    graph: PathBuf,
    classifier: PathBuf,
    assignment: PathBuf,
    locations: PathBuf,
}

static CHAIN: OnceLock<Chain> = OnceLock::new();

fn chain() -> &'static Chain {
    CHAIN.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let base = dir.path();
        let raw = base.join("raw.jsonl");
        let truth = base.join("truth.tsv");
        let synth_config = base.join("synth.toml");
        std::fs::write(
            &synth_config,
            "n_entities = 40\n\
             posts_per_entity = [4, 9]\n\
             generic_phash_count = 8\n\
             attach_probability = 0.4\n\
             sites = 2\n\
             seed = 21\n",
        )
        .expect("write synth config");
        assert_ok(
            &adlink([
                OsStr::new("synth"),
                OsStr::new("--out"),
                raw.as_os_str(),
                OsStr::new("--truth"),
                truth.as_os_str(),
                OsStr::new("--config"),
                synth_config.as_os_str(),
            ]),
            "synth",
        );

        let dataset = base.join("dataset.jsonl");
        let summary = base.join("ingest.tsv");
        assert_ok(
            &adlink([
                OsStr::new("ingest"),
                OsStr::new("--input"),
                raw.as_os_str(),
                OsStr::new("--out"),
                dataset.as_os_str(),
                OsStr::new("--summary"),
                summary.as_os_str(),
            ]),
            "ingest",
        );

        let locations = base.join("locations.tsv");
        let unmatched = base.join("unmatched.tsv");
        assert_ok(
            &adlink([
                OsStr::new("locations"),
                OsStr::new("--dataset"),
                dataset.as_os_str(),
                OsStr::new("--gazetteer"),
                fixtures().join("gazetteer.csv").as_os_str(),
                OsStr::new("--overlay"),
                fixtures().join("overlay.csv").as_os_str(),
                OsStr::new("--out"),
                locations.as_os_str(),
                OsStr::new("--unmatched"),
                unmatched.as_os_str(),
            ]),
            "locations",
        );

        let graph = base.join("graph.tsv");
        let stats = base.join("graph.json");
        assert_ok(
            &adlink([
                OsStr::new("build-graph"),
                OsStr::new("--dataset"),
                dataset.as_os_str(),
                OsStr::new("--out"),
                graph.as_os_str(),
                OsStr::new("--stats"),
                stats.as_os_str(),
            ]),
            "build-graph",
        );

        let classifier = base.join("classifier.json");
        let curve = base.join("curve.tsv");
        assert_ok(
            &adlink([
                OsStr::new("train-classifier"),
                OsStr::new("--graph"),
                graph.as_os_str(),
                OsStr::new("--dataset"),
                dataset.as_os_str(),
                OsStr::new("--out"),
                classifier.as_os_str(),
                OsStr::new("--curve"),
                curve.as_os_str(),
                OsStr::new("--n-pos"),
                OsStr::new("200"),
                OsStr::new("--n-neg"),
                OsStr::new("600"),
                OsStr::new("--seed"),
                OsStr::new("7"),
            ]),
            "train-classifier",
        );

        let assignment = base.join("assignment.tsv");
        let metrics = base.join("metrics.json");
        assert_ok(
            &adlink([
                OsStr::new("filter-gc"),
                OsStr::new("--graph"),
                graph.as_os_str(),
                OsStr::new("--classifier"),
                classifier.as_os_str(),
                OsStr::new("--dataset"),
                dataset.as_os_str(),
                OsStr::new("--out"),
                assignment.as_os_str(),
                OsStr::new("--metrics"),
                metrics.as_os_str(),
            ]),
            "filter-gc",
        );

        for artifact in [
            &raw,
            &truth,
            &dataset,
            &summary,
            &locations,
            &unmatched,
            &graph,
            &stats,
            &classifier,
            &curve,
            &assignment,
            &metrics,
        ] {
            let len = std::fs::metadata(artifact)
                .unwrap_or_else(|e| panic!("missing artifact {}: {e}", artifact.display()))
                .len();
            assert!(len > 0, "artifact {} is empty", artifact.display());
        }

        Chain {
            _dir: dir,
            dataset,
            graph,
            classifier,
            assignment,
            locations,
        }
    })
}

#[test]
fn subcommand_chain_produces_consistent_artifacts() {
    let chain = chain();

    // The assignment covers exactly the dataset's posts.
    let dataset_lines = std::fs::read_to_string(&chain.dataset)
        .expect("dataset")
        .lines()
        .count();
    let assignment_lines = std::fs::read_to_string(&chain.assignment)
        .expect("assignment")
        .lines()
        .count();
    assert_eq!(
        assignment_lines,
        dataset_lines + 1,
        "assignment must hold one row per post plus a header"
    );
}

#[test]
fn bc_filter_and_benchmark_run_on_chain_artifacts() {
    let chain = chain();
    let dir = tempfile::tempdir().expect("tempdir");

    let bc = dir.path().join("bc.tsv");
    let output = adlink([
        OsStr::new("bc-filter"),
        OsStr::new("--graph"),
        chain.graph.as_os_str(),
        OsStr::new("--out"),
        bc.as_os_str(),
        OsStr::new("--fraction"),
        OsStr::new("1.0"),
    ]);
    assert_ok(&output, "bc-filter");
    let table = std::fs::read_to_string(&bc).expect("bc table");
    assert!(table.starts_with("kind\tkey\tcentrality\tremoved"));
    assert!(table.lines().count() > 1, "bc table must list vertices");

    let bench = dir.path().join("bench.tsv");
    let output = adlink([
        OsStr::new("benchmark"),
        OsStr::new("--graph"),
        chain.graph.as_os_str(),
        OsStr::new("--dataset"),
        chain.dataset.as_os_str(),
        OsStr::new("--classifier"),
        chain.classifier.as_os_str(),
        OsStr::new("--out"),
        bench.as_os_str(),
        OsStr::new("--fraction"),
        OsStr::new("1.0"),
    ]);
    assert_ok(&output, "benchmark");
    let rows = std::fs::read_to_string(&bench).expect("bench table");
    assert_eq!(rows.lines().count(), 3, "header plus two method rows");
}

#[test]
fn reports_run_from_assignment() {
    let chain = chain();
    let dir = tempfile::tempdir().expect("tempdir");

    let summary = dir.path().join("summary.tsv");
    let json = dir.path().join("summary.json");
    let output = adlink([
        OsStr::new("report"),
        OsStr::new("summary"),
        OsStr::new("--assignment"),
        chain.assignment.as_os_str(),
        OsStr::new("--dataset"),
        chain.dataset.as_os_str(),
        OsStr::new("--locations"),
        chain.locations.as_os_str(),
        OsStr::new("--region"),
        OsStr::new("TX"),
        OsStr::new("--window-days"),
        OsStr::new("10000"),
        OsStr::new("--out"),
        summary.as_os_str(),
        OsStr::new("--json"),
        json.as_os_str(),
    ]);
    assert_ok(&output, "report summary");
    assert!(summary.exists() && json.exists());

    // Expand the component of the first assigned post.
    let assignment_text = std::fs::read_to_string(&chain.assignment).expect("assignment");
    let component = assignment_text
        .lines()
        .nth(1)
        .and_then(|line| line.split('\t').nth(1))
        .expect("assignment data row");
    let detail = dir.path().join("detail.json");
    let matrix = dir.path().join("matrix.tsv");
    let output = adlink([
        OsStr::new("report"),
        OsStr::new("detail"),
        OsStr::new("--assignment"),
        chain.assignment.as_os_str(),
        OsStr::new("--dataset"),
        chain.dataset.as_os_str(),
        OsStr::new("--locations"),
        chain.locations.as_os_str(),
        OsStr::new("--component"),
        OsStr::new(component),
        OsStr::new("--window-days"),
        OsStr::new("10000"),
        OsStr::new("--out"),
        detail.as_os_str(),
        OsStr::new("--matrix"),
        matrix.as_os_str(),
    ]);
    assert_ok(&output, "report detail");
    assert!(detail.exists() && matrix.exists());
}

#[test]
fn config_and_usage_errors_exit_2() {
    let dir = tempfile::tempdir().expect("tempdir");

    // run without a config.
    assert_eq!(code(&adlink(["run"])), 2, "run without --config");

    // run with a missing config file.
    let output = adlink([
        OsStr::new("run"),
        OsStr::new("--config"),
        dir.path().join("missing.toml").as_os_str(),
    ]);
    assert_eq!(code(&output), 2, "missing config file");

    // Unparseable TOML.
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "this is not toml at all [[[").expect("write");
    let output = adlink([
        OsStr::new("run"),
        OsStr::new("--config"),
        broken.as_os_str(),
    ]);
    assert_eq!(code(&output), 2, "malformed config");

    // Valid TOML pointing at inputs that do not exist.
    let dangling = dir.path().join("dangling.toml");
    std::fs::write(
        &dangling,
        "[input]\ndataset = \"/no/such/dataset.jsonl\"\ngazetteer = \"/no/such/gazetteer.csv\"\n\
         [output]\ndir = \"out\"\n",
    )
    .expect("write");
    let output = adlink([
        OsStr::new("run"),
        OsStr::new("--config"),
        dangling.as_os_str(),
    ]);
    assert_eq!(code(&output), 2, "config with missing inputs");

    // Unknown synth profile.
    let output = adlink([
        OsStr::new("synth"),
        OsStr::new("--out"),
        dir.path().join("x.jsonl").as_os_str(),
        OsStr::new("--truth"),
        dir.path().join("x.tsv").as_os_str(),
        OsStr::new("--profile"),
        OsStr::new("gigantic"),
    ]);
    assert_eq!(code(&output), 2, "unknown profile");

    // Out-of-range numeric flags fail before any file is read.
    let output = adlink([
        OsStr::new("bc-filter"),
        OsStr::new("--graph"),
        OsStr::new("/no/such/graph.tsv"),
        OsStr::new("--out"),
        dir.path().join("bc.tsv").as_os_str(),
        OsStr::new("--fraction"),
        OsStr::new("0"),
    ]);
    assert_eq!(code(&output), 2, "zero sample fraction");
    assert!(
        stderr_of(&output).contains("fraction"),
        "error should name the flag"
    );

    let output = adlink([
        OsStr::new("filter-gc"),
        OsStr::new("--graph"),
        OsStr::new("/no/such/graph.tsv"),
        OsStr::new("--classifier"),
        OsStr::new("/no/such/classifier.json"),
        OsStr::new("--dataset"),
        OsStr::new("/no/such/dataset.jsonl"),
        OsStr::new("--out"),
        dir.path().join("a.tsv").as_os_str(),
        OsStr::new("--delta"),
        OsStr::new("1.5"),
    ]);
    assert_eq!(code(&output), 2, "delta above 1");

    // Unknown arguments are usage errors too (clap's own exit code).
    assert_eq!(code(&adlink(["definitely-not-a-command"])), 2);
    assert_eq!(code(&adlink(["ingest", "--no-such-flag"])), 2);

    // Zero worker threads.
    let output = adlink(["run", "--threads", "0"]);
    assert_eq!(code(&output), 2, "zero threads");
}

#[test]
fn stage_failures_exit_3() {
    let chain = chain();
    let dir = tempfile::tempdir().expect("tempdir");

    // Dataset file missing.
    let output = adlink([
        OsStr::new("build-graph"),
        OsStr::new("--dataset"),
        OsStr::new("/no/such/dataset.jsonl"),
        OsStr::new("--out"),
        dir.path().join("g.tsv").as_os_str(),
    ]);
    assert_eq!(code(&output), 3, "missing dataset is a stage failure");

    // Graph file missing while the dataset is fine.
    let output = adlink([
        OsStr::new("filter-gc"),
        OsStr::new("--graph"),
        OsStr::new("/no/such/graph.tsv"),
        OsStr::new("--classifier"),
        chain.classifier.as_os_str(),
        OsStr::new("--dataset"),
        chain.dataset.as_os_str(),
        OsStr::new("--out"),
        dir.path().join("a.tsv").as_os_str(),
    ]);
    assert_eq!(code(&output), 3, "missing graph is a stage failure");

    // No giant component above an extreme threshold.
    let output = adlink([
        OsStr::new("bc-filter"),
        OsStr::new("--graph"),
        chain.graph.as_os_str(),
        OsStr::new("--out"),
        dir.path().join("bc.tsv").as_os_str(),
        OsStr::new("--p-min"),
        OsStr::new("0.99"),
    ]);
    assert_eq!(code(&output), 3, "no giant component above p_min");
}

#[test]
fn time_limit_exit_4() {
    let chain = chain();
    let dir = tempfile::tempdir().expect("tempdir");
    let output = adlink([
        OsStr::new("bc-filter"),
        OsStr::new("--graph"),
        chain.graph.as_os_str(),
        OsStr::new("--out"),
        dir.path().join("bc.tsv").as_os_str(),
        OsStr::new("--time-limit"),
        OsStr::new("0"),
    ]);
    assert_eq!(code(&output), 4, "zero time limit must abort with code 4");
    assert!(
        stderr_of(&output).contains("time limit"),
        "stderr should explain the timeout: {}",
        stderr_of(&output)
    );
}

#[test]
fn seed_flag_reproduces_outputs() {
    let dir = tempfile::tempdir().expect("tempdir");
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for (out, truth) in [(&a, "ta.tsv"), (&b, "tb.tsv")] {
        assert_ok(
            &adlink([
                OsStr::new("synth"),
                OsStr::new("--out"),
                out.as_os_str(),
                OsStr::new("--truth"),
                dir.path().join(truth).as_os_str(),
                OsStr::new("--profile"),
                OsStr::new("fixture"),
                OsStr::new("--seed"),
                OsStr::new("99"),
            ]),
            "seeded synth",
        );
    }
    let bytes_a = std::fs::read(&a).expect("a");
    let bytes_b = std::fs::read(&b).expect("b");
    assert_eq!(bytes_a, bytes_b, "same seed must give identical datasets");
}
