//! The guide's chapters, compiled here as documentation tests so every
//! code block in the book builds and runs against the current API.
//! This module only exists during doctest collection.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/records.md")]
pub mod records {}

#[doc = include_str!("../../../book/src/locations.md")]
pub mod locations {}

#[doc = include_str!("../../../book/src/graph.md")]
pub mod graph {}

#[doc = include_str!("../../../book/src/similarity.md")]
pub mod similarity {}

#[doc = include_str!("../../../book/src/filtering.md")]
pub mod filtering {}

#[doc = include_str!("../../../book/src/betweenness.md")]
pub mod betweenness {}

#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}

#[doc = include_str!("../../../book/src/reports.md")]
pub mod reports {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
