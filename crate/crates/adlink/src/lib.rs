//! Links multi-site classified-ad records at the level of a unique posting
//! entity.
//!
//! Ads reuse artifacts — post texts, image perceptual hashes, contact
//! values — and shared artifacts connect ads into an undirected graph whose
//! connected components approximate posting entities. Generic and
//! misappropriated artifacts fuse a large fraction of the graph into one
//! giant component; this crate detects that component, projects it onto
//! post vertices, scores each projected edge with a same-user classifier,
//! and cuts low-probability edges so the giant component decomposes into
//! entity-sized components without dropping any post.
//!
//! The pipeline stages, each usable on its own:
//!
//! - [`ingest`]: parse, validate, deduplicate, and summarize record files.
//! - [`gazetteer`]: canonicalize raw city/state strings to county + FIPS.
//! - [`graph`]: build the artifact graph, label components, find the giant.
//! - [`similarity`]: embeddings, cosine, self-labeled training pairs, and
//!   the logistic same-user classifier.
//! - [`gcfilter`]: project the giant component onto posts, cut edges below
//!   the probability threshold, relabel losslessly.
//! - [`bcfilter`]: the betweenness-centrality vertex-removal baseline and
//!   the benchmark comparing both methods.
//! - [`synth`]: synthetic datasets with planted entities and ground truth.
//! - [`report`]: summary and detail outputs for a target region.
//! - [`pipeline`]: configuration and end-to-end orchestration.
//!
//! The `adlink` binary exposes every stage as a subcommand; see the guide
//! under `book/` for a walkthrough of each concept.

pub mod bcfilter;
pub mod gazetteer;
pub mod gcfilter;
pub mod graph;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod similarity;
pub mod synth;

pub use gcfilter::{ComponentAssignment, FilterConfig};
pub use graph::{ArtifactGraph, ArtifactId, ArtifactKind, ComponentSet};
pub use ingest::{AdRecord, Dataset};
pub use similarity::{EmbeddingProvider, SameUserClassifier};

#[cfg(doctest)]
pub mod book;
