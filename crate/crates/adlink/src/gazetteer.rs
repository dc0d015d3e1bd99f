//! Canonicalizes raw city/state strings to county names and FIPS codes.
//!
//! Sites expose different spellings and granularities for the same place
//! ("Fort Worth", "Ft Worth", "Ft. Worth", "Dallas/Fort Worth"). Matching
//! is exact over a normalized key; everything the gazetteer table cannot
//! match goes through a manual overlay, and what remains is surfaced in an
//! unmatched-impact report sorted by how many URLs each raw key affects.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Dataset;

#[derive(Debug, Error)]
pub enum GazetteerError {
    #[error("failed to read table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad row in {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("conflicting rows for key {key:?} in {path}")]
    ConflictingRows { key: String, path: String },
    #[error("invalid FIPS code {fips:?} for {city}, {state}")]
    InvalidFips {
        fips: String,
        city: String,
        state: String,
    },
}

/// A resolved place: city, 2-letter state code, county, 5-digit FIPS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalLocation {
    pub city: String,
    pub state: String,
    pub county: String,
    pub fips: String,
}

impl CanonicalLocation {
    fn validate(self) -> Result<Self, GazetteerError> {
        if self.fips.len() != 5 || !self.fips.bytes().all(|b| b.is_ascii_digit()) {
            return Err(GazetteerError::InvalidFips {
                fips: self.fips,
                city: self.city,
                state: self.state,
            });
        }
        Ok(self)
    }
}

/// Lowercased, punctuation-stripped, whitespace-collapsed `city|state` key.
pub fn normalize_key(city: &str, state: &str) -> String {
    format!("{}|{}", normalize_part(city), normalize_part(state))
}

fn normalize_part(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.chars() {
        let c = if c.is_alphanumeric() {
            Some(c.to_ascii_lowercase())
        } else {
            None
        };
        match c {
            Some(c) => {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.push(c);
            }
            // Punctuation and whitespace both act as soft separators.
            None => pending_space = true,
        }
    }
    out
}

/// Exact-match tables: a gazetteer of clean places plus an overlay of
/// manually curated raw-string fixes. Overlay entries win.
#[derive(Debug, Default, Clone)]
pub struct LocationResolver {
    gazetteer: HashMap<String, CanonicalLocation>,
    overlay: HashMap<String, CanonicalLocation>,
}

#[derive(Debug, Deserialize)]
struct GazetteerRow {
    city: String,
    state_code: String,
    county: String,
    fips: String,
}

#[derive(Debug, Deserialize)]
struct OverlayRow {
    raw_city: String,
    raw_state: String,
    city: String,
    state_code: String,
    county: String,
    fips: String,
}

fn insert_checked(
    map: &mut HashMap<String, CanonicalLocation>,
    key: String,
    loc: CanonicalLocation,
    path: &str,
) -> Result<(), GazetteerError> {
    match map.get(&key) {
        Some(existing) if *existing != loc => Err(GazetteerError::ConflictingRows {
            key,
            path: path.to_string(),
        }),
        _ => {
            map.insert(key, loc);
            Ok(())
        }
    }
}

impl LocationResolver {
    pub fn load(
        gazetteer_path: &Path,
        overlay_path: Option<&Path>,
    ) -> Result<Self, GazetteerError> {
        let mut resolver = LocationResolver::default();
        resolver
            .load_gazetteer_reader(open(gazetteer_path)?, &gazetteer_path.display().to_string())?;
        if let Some(p) = overlay_path {
            resolver.load_overlay_reader(open(p)?, &p.display().to_string())?;
        }
        Ok(resolver)
    }

    pub fn load_gazetteer_reader<R: std::io::Read>(
        &mut self,
        reader: R,
        path: &str,
    ) -> Result<(), GazetteerError> {
        let mut csv = csv::Reader::from_reader(reader);
        for row in csv.deserialize::<GazetteerRow>() {
            let row = row.map_err(|source| GazetteerError::Csv {
                path: path.to_string(),
                source,
            })?;
            let key = normalize_key(&row.city, &row.state_code);
            let loc = CanonicalLocation {
                city: row.city,
                state: row.state_code,
                county: row.county,
                fips: row.fips,
            }
            .validate()?;
            insert_checked(&mut self.gazetteer, key, loc, path)?;
        }
        Ok(())
    }

    pub fn load_overlay_reader<R: std::io::Read>(
        &mut self,
        reader: R,
        path: &str,
    ) -> Result<(), GazetteerError> {
        let mut csv = csv::Reader::from_reader(reader);
        for row in csv.deserialize::<OverlayRow>() {
            let row = row.map_err(|source| GazetteerError::Csv {
                path: path.to_string(),
                source,
            })?;
            let key = normalize_key(&row.raw_city, &row.raw_state);
            let loc = CanonicalLocation {
                city: row.city,
                state: row.state_code,
                county: row.county,
                fips: row.fips,
            }
            .validate()?;
            insert_checked(&mut self.overlay, key, loc, path)?;
        }
        Ok(())
    }

    /// Adds one overlay rule programmatically; overlay precedence applies.
    pub fn add_overlay_rule(&mut self, raw_city: &str, raw_state: &str, target: CanonicalLocation) {
        self.overlay
            .insert(normalize_key(raw_city, raw_state), target);
    }

    /// Overlay first, then the gazetteer; `None` when neither matches.
    pub fn resolve(&self, city: &str, state: &str) -> Option<&CanonicalLocation> {
        let key = normalize_key(city, state);
        self.overlay.get(&key).or_else(|| self.gazetteer.get(&key))
    }

    pub fn gazetteer_len(&self) -> usize {
        self.gazetteer.len()
    }

    pub fn overlay_len(&self) -> usize {
        self.overlay.len()
    }
}

fn open(path: &Path) -> Result<File, GazetteerError> {
    File::open(path).map_err(|source| GazetteerError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One unmatched raw key with the number and share of URLs it affects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnmatchedRow {
    pub raw_city: String,
    pub raw_state: String,
    pub urls: u64,
    pub url_share: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct UnmatchedReport {
    pub rows: Vec<UnmatchedRow>,
    pub total_urls: u64,
    pub unmatched_urls: u64,
    /// unmatched_urls / total_urls.
    pub unmatched_fraction: f64,
}

/// Tallies URLs whose (city, state) resolves to nothing, sorted by
/// descending URL count with the raw key as tiebreak.
pub fn unmatched_report(dataset: &Dataset, resolver: &LocationResolver) -> UnmatchedReport {
    use std::collections::HashSet;
    let mut total: HashSet<u64> = HashSet::new();
    let mut by_key: HashMap<(String, String), HashSet<u64>> = HashMap::new();
    for r in &dataset.records {
        total.insert(r.url);
        if resolver.resolve(&r.target_city, &r.target_state).is_none() {
            by_key
                .entry((r.target_city.to_string(), r.target_state.to_string()))
                .or_default()
                .insert(r.url);
        }
    }
    let total_urls = total.len() as u64;
    let mut rows: Vec<UnmatchedRow> = by_key
        .into_iter()
        .map(|((raw_city, raw_state), urls)| UnmatchedRow {
            raw_city,
            raw_state,
            urls: urls.len() as u64,
            url_share: if total_urls == 0 {
                0.0
            } else {
                urls.len() as f64 / total_urls as f64
            },
        })
        .collect();
    rows.sort_by(|a, b| {
        b.urls
            .cmp(&a.urls)
            .then_with(|| a.raw_city.cmp(&b.raw_city))
            .then_with(|| a.raw_state.cmp(&b.raw_state))
    });
    let unmatched_urls: u64 = rows.iter().map(|r| r.urls).sum();
    UnmatchedReport {
        rows,
        total_urls,
        unmatched_urls,
        unmatched_fraction: if total_urls == 0 {
            0.0
        } else {
            unmatched_urls as f64 / total_urls as f64
        },
    }
}

impl UnmatchedReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("raw_city\traw_state\turls\turl_share\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\n",
                row.raw_city, row.raw_state, row.urls, row.url_share
            ));
        }
        out
    }
}

/// Maps every distinct raw (city, state) pair in the dataset to its
/// resolution, for downstream region filtering. Unresolved keys are
/// omitted. Rows sorted by raw key.
pub fn resolve_dataset(
    dataset: &Dataset,
    resolver: &LocationResolver,
) -> Vec<((String, String), CanonicalLocation)> {
    let mut out: HashMap<(String, String), CanonicalLocation> = HashMap::new();
    for r in &dataset.records {
        let raw = (r.target_city.to_string(), r.target_state.to_string());
        if out.contains_key(&raw) {
            continue;
        }
        if let Some(loc) = resolver.resolve(&r.target_city, &r.target_state) {
            out.insert(raw, loc.clone());
        }
    }
    let mut rows: Vec<_> = out.into_iter().collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    rows
}

pub fn write_mapping(
    rows: &[((String, String), CanonicalLocation)],
    path: &Path,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = String::from("raw_city\traw_state\tcity\tstate\tcounty\tfips\n");
    for ((raw_city, raw_state), loc) in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            raw_city, raw_state, loc.city, loc.state, loc.county, loc.fips
        ));
    }
    File::create(path)?.write_all(out.as_bytes())
}

/// Reads a mapping file written by [`write_mapping`].
pub fn read_mapping(path: &Path) -> std::io::Result<HashMap<(String, String), CanonicalLocation>> {
    let content = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for line in content.lines().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            continue;
        }
        map.insert(
            (fields[0].to_string(), fields[1].to_string()),
            CanonicalLocation {
                city: fields[2].to_string(),
                state: fields[3].to_string(),
                county: fields[4].to_string(),
                fips: fields[5].to_string(),
            },
        );
    }
    Ok(map)
}
