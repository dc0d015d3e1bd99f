//! Partner-facing outputs: a regional summary of posting entities and a
//! per-entity detail block.
//!
//! The summary lists components (posting entities) active in a chosen
//! region within a recency window, with how concentrated their posting
//! is there. The detail block expands one component into its recent
//! posts and a month-by-state movement matrix. Both are emitted as data
//! (TSV/JSON), and both are linked by the component id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gazetteer::CanonicalLocation;
use crate::gcfilter::ComponentAssignment;
use crate::ingest::Dataset;

/// Raw (city, state) → canonical resolution, as produced by the
/// location-mapping stage.
pub type LocationMapping = HashMap<(String, String), CanonicalLocation>;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("failed to write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown region {given:?}; valid codes: {}", valid.join(", "))]
    UnknownRegion { given: String, valid: Vec<String> },
    #[error("no component with id {component}")]
    UnknownComponent { component: u32 },
    #[error("report serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
}

/// A region filter: either a two-letter state code or a 5-digit county
/// FIPS code, validated against the location mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Region {
    State(String),
    Fips(String),
}

impl Region {
    /// Accepts codes that actually occur in the mapping; anything else
    /// errors with the list of codes that would have worked.
    pub fn parse(code: &str, mapping: &LocationMapping) -> Result<Region, ReportError> {
        let states: BTreeSet<&str> = mapping.values().map(|l| l.state.as_str()).collect();
        let fips: BTreeSet<&str> = mapping.values().map(|l| l.fips.as_str()).collect();
        let trimmed = code.trim();
        if trimmed.len() == 5 && trimmed.bytes().all(|b| b.is_ascii_digit()) {
            if fips.contains(trimmed) {
                return Ok(Region::Fips(trimmed.to_string()));
            }
        } else {
            let upper = trimmed.to_ascii_uppercase();
            if states.contains(upper.as_str()) {
                return Ok(Region::State(upper));
            }
        }
        let mut valid: Vec<String> = states.iter().map(|s| s.to_string()).collect();
        valid.extend(fips.iter().map(|f| f.to_string()));
        Err(ReportError::UnknownRegion {
            given: code.to_string(),
            valid,
        })
    }

    pub fn matches(&self, location: &CanonicalLocation) -> bool {
        match self {
            Region::State(s) => location.state == *s,
            Region::Fips(f) => location.fips == *f,
        }
    }
}

/// Filters for the summary listing.
#[derive(Debug, Clone)]
pub struct SummaryOptions {
    pub region: Region,
    /// Minimum in-window ads targeting the region.
    pub min_frequency: u64,
    /// Minimum share of the component's in-window ads targeting the
    /// region.
    pub min_proportion: f64,
    pub window_days: u32,
}

pub const DEFAULT_WINDOW_DAYS: u32 = 90;

/// A phone and when it last appeared inside the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactSighting {
    pub phone: u64,
    pub last_seen: NaiveDate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub component_id: u32,
    /// In-window ads of the component across all regions.
    pub ad_count: u64,
    /// In-window ads targeting the filter region.
    pub region_ads: u64,
    pub region_target_proportion: f64,
    /// Most recently seen first.
    pub recent_contacts: Vec<ContactSighting>,
    pub sites: Vec<u32>,
}

fn window_bounds(dataset: &Dataset, window_days: u32) -> Option<(NaiveDate, NaiveDate)> {
    let as_of = dataset.records.iter().map(|r| r.post_date).max()?;
    Some((as_of - Duration::days(i64::from(window_days)), as_of))
}

/// Components active in the region within the window, ordered by ad
/// count descending (component id breaking ties). Locations the mapping
/// cannot resolve never match the region.
pub fn summary_report(
    assignment: &ComponentAssignment,
    dataset: &Dataset,
    mapping: &LocationMapping,
    options: &SummaryOptions,
) -> Result<Vec<SummaryRow>, ReportError> {
    struct Accumulator {
        ad_count: u64,
        region_ads: u64,
        contacts: BTreeMap<u64, NaiveDate>,
        sites: BTreeSet<u32>,
    }
    let Some((window_start, _)) = window_bounds(dataset, options.window_days) else {
        return Ok(Vec::new());
    };
    let mut per_component: BTreeMap<u32, Accumulator> = BTreeMap::new();
    for record in &dataset.records {
        if record.post_date < window_start {
            continue;
        }
        let Some(component) = assignment.component_of(record.post_key) else {
            continue;
        };
        let acc = per_component.entry(component).or_insert(Accumulator {
            ad_count: 0,
            region_ads: 0,
            contacts: BTreeMap::new(),
            sites: BTreeSet::new(),
        });
        acc.ad_count += 1;
        let raw = (
            record.target_city.to_string(),
            record.target_state.to_string(),
        );
        if let Some(location) = mapping.get(&raw) {
            if options.region.matches(location) {
                acc.region_ads += 1;
            }
        }
        acc.sites.insert(record.site);
        for &phone in &record.phones {
            let seen = acc.contacts.entry(phone).or_insert(record.post_date);
            if record.post_date > *seen {
                *seen = record.post_date;
            }
        }
    }

    let mut rows: Vec<SummaryRow> = per_component
        .into_iter()
        .filter_map(|(component_id, acc)| {
            let proportion = if acc.ad_count == 0 {
                0.0
            } else {
                acc.region_ads as f64 / acc.ad_count as f64
            };
            if acc.region_ads < options.min_frequency || proportion < options.min_proportion {
                return None;
            }
            let mut recent_contacts: Vec<ContactSighting> = acc
                .contacts
                .into_iter()
                .map(|(phone, last_seen)| ContactSighting { phone, last_seen })
                .collect();
            recent_contacts
                .sort_by(|a, b| b.last_seen.cmp(&a.last_seen).then(a.phone.cmp(&b.phone)));
            Some(SummaryRow {
                component_id,
                ad_count: acc.ad_count,
                region_ads: acc.region_ads,
                region_target_proportion: proportion,
                recent_contacts,
                sites: acc.sites.into_iter().collect(),
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        b.ad_count
            .cmp(&a.ad_count)
            .then(a.component_id.cmp(&b.component_id))
    });
    Ok(rows)
}

/// Matrix column used for ads whose location the mapping can't resolve.
pub const UNRESOLVED_COLUMN: &str = "unresolved";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetailPost {
    pub url: u64,
    pub post_key: u64,
    pub site: u32,
    pub post_date: NaiveDate,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetailBlock {
    pub component_id: u32,
    /// In-window ads of the component; equals the matrix cell total.
    pub ad_count: u64,
    /// All in-window posts, newest first.
    pub posts: Vec<DetailPost>,
    /// month ("YYYY-MM") → state (or unresolved) → ad count.
    pub matrix: BTreeMap<String, BTreeMap<String, u64>>,
}

/// Expands one component: its recent posts and where its ads landed,
/// month by month and state by state.
pub fn detail_report(
    assignment: &ComponentAssignment,
    dataset: &Dataset,
    mapping: &LocationMapping,
    component_id: u32,
    window_days: u32,
) -> Result<DetailBlock, ReportError> {
    if component_id >= assignment.component_count() {
        return Err(ReportError::UnknownComponent {
            component: component_id,
        });
    }
    let mut block = DetailBlock {
        component_id,
        ad_count: 0,
        posts: Vec::new(),
        matrix: BTreeMap::new(),
    };
    let Some((window_start, _)) = window_bounds(dataset, window_days) else {
        return Ok(block);
    };
    for record in &dataset.records {
        if record.post_date < window_start {
            continue;
        }
        if assignment.component_of(record.post_key) != Some(component_id) {
            continue;
        }
        block.ad_count += 1;
        block.posts.push(DetailPost {
            url: record.url,
            post_key: record.post_key,
            site: record.site,
            post_date: record.post_date,
            text: record.post_text.to_string(),
        });
        let raw = (
            record.target_city.to_string(),
            record.target_state.to_string(),
        );
        let column = mapping
            .get(&raw)
            .map(|l| l.state.clone())
            .unwrap_or_else(|| UNRESOLVED_COLUMN.to_string());
        let month = format!(
            "{:04}-{:02}",
            record.post_date.year(),
            record.post_date.month()
        );
        *block
            .matrix
            .entry(month)
            .or_default()
            .entry(column)
            .or_default() += 1;
    }
    block
        .posts
        .sort_by(|a, b| b.post_date.cmp(&a.post_date).then(a.url.cmp(&b.url)));
    Ok(block)
}

pub fn write_summary_tsv(rows: &[SummaryRow], path: &Path) -> Result<(), ReportError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "component_id\tad_count\tregion_ads\tregion_target_proportion\tsites\trecent_contacts"
    )?;
    for r in rows {
        let sites: Vec<String> = r.sites.iter().map(|s| s.to_string()).collect();
        let contacts: Vec<String> = r
            .recent_contacts
            .iter()
            .map(|c| format!("{}:{}", c.phone, c.last_seen))
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{}\t{}",
            r.component_id,
            r.ad_count,
            r.region_ads,
            r.region_target_proportion,
            sites.join(","),
            contacts.join(";")
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_json(rows: &[SummaryRow], path: &Path) -> Result<(), ReportError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, rows)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn write_detail_json(block: &DetailBlock, path: &Path) -> Result<(), ReportError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, block)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// The movement matrix as a grid: months down, states across,
/// unresolved last.
pub fn write_detail_matrix_tsv(block: &DetailBlock, path: &Path) -> Result<(), ReportError> {
    let mut columns: BTreeSet<&str> = BTreeSet::new();
    for row in block.matrix.values() {
        columns.extend(row.keys().map(String::as_str));
    }
    let unresolved = columns.remove(UNRESOLVED_COLUMN);
    let mut ordered: Vec<&str> = columns.into_iter().collect();
    if unresolved {
        ordered.push(UNRESOLVED_COLUMN);
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "month\t{}", ordered.join("\t"))?;
    for (month, cells) in &block.matrix {
        let counts: Vec<String> = ordered
            .iter()
            .map(|c| cells.get(*c).copied().unwrap_or(0).to_string())
            .collect();
        writeln!(out, "{month}\t{}", counts.join("\t"))?;
    }
    out.flush()?;
    Ok(())
}
