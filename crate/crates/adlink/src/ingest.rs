//! Parsing, validation, deduplication, and summaries for ad records.
//!
//! Input is line-delimited JSON in the open-dataset shape: one object per
//! line with the fields `url`, `site`, `post_masked`, `post_int`,
//! `phone_int`, `phash16`, and optionally `post_date`, `target_city`,
//! `target_state`. The open dataset stores one line per `(url, phash)`
//! pair; [`dedupe_by_url`] merges those lines into one record per ad.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Date assigned to records whose input line carries no `post_date`.
pub const DEFAULT_POST_DATE: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => unreachable!(),
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read input stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to write dataset: {0}")]
    Write(std::io::Error),
}

/// One ad after merging its `(url, phash)` lines: a single post text plus
/// the pHashes and contacts observed with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AdRecord {
    pub url: u64,
    pub site: u32,
    pub post_text: Arc<str>,
    pub post_key: u64,
    pub phashes: Vec<u64>,
    pub phones: Vec<u64>,
    pub post_date: NaiveDate,
    pub target_city: Arc<str>,
    pub target_state: Arc<str>,
}

/// An ordered collection of records plus the tag of where they came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<AdRecord>,
    pub source_tag: String,
}

/// Line-level accounting for one parse pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    /// Non-empty input lines seen.
    pub lines: u64,
    pub accepted: u64,
    pub rejected: u64,
}

/// Scalar-or-array wire field. The open dataset emits scalars (one line
/// per phash); the canonical serializer emits arrays for merged records.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(vs) => vs,
        }
    }
}

#[derive(Debug, Deserialize)]
struct WireRecord {
    url: u64,
    site: u32,
    post_masked: String,
    post_int: u64,
    #[serde(default)]
    phone_int: Option<OneOrMany<u64>>,
    #[serde(default)]
    phash16: Option<OneOrMany<String>>,
    #[serde(default)]
    post_date: Option<String>,
    #[serde(default)]
    target_city: Option<String>,
    #[serde(default)]
    target_state: Option<String>,
}

/// Strict 16-hex-char parse of a pHash value.
pub fn parse_phash16(s: &str) -> Option<u64> {
    if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    u64::from_str_radix(s, 16).ok()
}

/// Renders a pHash the way the wire format expects it.
pub fn format_phash16(v: u64) -> String {
    format!("{v:016x}")
}

#[derive(Default)]
struct Interner {
    texts: HashMap<Arc<str>, u64>,
    by_key: HashMap<u64, Arc<str>>,
    strings: HashMap<String, Arc<str>>,
}

impl Interner {
    /// Returns the shared text for (key, text), or None when the pair
    /// breaks the key<->text bijection seen so far.
    fn intern_post(&mut self, key: u64, text: &str) -> Option<Arc<str>> {
        if let Some(existing) = self.by_key.get(&key) {
            if existing.as_ref() != text {
                return None;
            }
            return Some(Arc::clone(existing));
        }
        if self.texts.contains_key(text) {
            // Same text already bound to a different key.
            return None;
        }
        let shared: Arc<str> = Arc::from(text);
        self.texts.insert(Arc::clone(&shared), key);
        self.by_key.insert(key, Arc::clone(&shared));
        Some(shared)
    }

    fn intern_str(&mut self, s: &str) -> Arc<str> {
        if let Some(v) = self.strings.get(s) {
            return Arc::clone(v);
        }
        let shared: Arc<str> = Arc::from(s);
        self.strings.insert(s.to_string(), Arc::clone(&shared));
        shared
    }
}

fn record_from_wire(wire: WireRecord, interner: &mut Interner) -> Option<AdRecord> {
    let post_text = interner.intern_post(wire.post_int, &wire.post_masked)?;
    let mut phashes = Vec::new();
    if let Some(field) = wire.phash16 {
        for s in field.into_vec() {
            phashes.push(parse_phash16(&s)?);
        }
    }
    let phones = wire.phone_int.map(OneOrMany::into_vec).unwrap_or_default();
    let post_date = match wire.post_date {
        Some(s) => NaiveDate::parse_from_str(&s, "%Y-%m-%d").ok()?,
        None => DEFAULT_POST_DATE,
    };
    Some(AdRecord {
        url: wire.url,
        site: wire.site,
        post_text,
        post_key: wire.post_int,
        phashes,
        phones,
        post_date,
        target_city: interner.intern_str(wire.target_city.as_deref().unwrap_or("")),
        target_state: interner.intern_str(wire.target_state.as_deref().unwrap_or("")),
    })
}

/// Parses line-delimited records. Malformed lines are counted and skipped;
/// only an unreadable stream is fatal. Lines violating the post-key/text
/// bijection or carrying a non-16-hex phash are malformed. Empty lines are
/// ignored entirely.
pub fn parse_records<R: BufRead>(
    reader: R,
    source_tag: &str,
) -> Result<(Dataset, IngestStats), IngestError> {
    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    let mut interner = Interner::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let parsed = serde_json::from_str::<WireRecord>(&line)
            .ok()
            .and_then(|wire| record_from_wire(wire, &mut interner));
        match parsed {
            Some(record) => {
                records.push(record);
                stats.accepted += 1;
            }
            None => stats.rejected += 1,
        }
    }
    Ok((
        Dataset {
            records,
            source_tag: source_tag.to_string(),
        },
        stats,
    ))
}

pub fn parse_records_from_path(path: &Path) -> Result<(Dataset, IngestStats), IngestError> {
    let file = File::open(path)?;
    let tag = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_records(BufReader::new(file), &tag)
}

/// First occurrence per `url` wins; later lines for the same url merge
/// their phashes and phones into the retained record (no artifact is
/// dropped). Returns the deduplicated dataset and the duplicate count.
pub fn dedupe_by_url(dataset: Dataset) -> (Dataset, u64) {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut out: Vec<AdRecord> = Vec::with_capacity(dataset.records.len());
    let mut duplicates = 0u64;
    for record in dataset.records {
        match seen.get(&record.url) {
            Some(&idx) => {
                duplicates += 1;
                let kept = &mut out[idx];
                for p in record.phashes {
                    if !kept.phashes.contains(&p) {
                        kept.phashes.push(p);
                    }
                }
                for p in record.phones {
                    if !kept.phones.contains(&p) {
                        kept.phones.push(p);
                    }
                }
            }
            None => {
                seen.insert(record.url, out.len());
                out.push(record);
            }
        }
    }
    (
        Dataset {
            records: out,
            source_tag: dataset.source_tag,
        },
        duplicates,
    )
}

/// Per-site counts of the kind reported for multi-site datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiteCounts {
    pub site: String,
    pub urls: u64,
    pub unique_posts: u64,
    pub unique_phashes: u64,
    pub unique_phones: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    /// One row per site, ascending by site id, then an "All" row computed
    /// over the union of artifacts (not the sum of rows).
    pub rows: Vec<SiteCounts>,
}

impl DatasetSummary {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("site\turls\tunique_posts\tunique_phashes\tunique_phones\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                row.site, row.urls, row.unique_posts, row.unique_phashes, row.unique_phones
            ));
        }
        out
    }

    pub fn all_row(&self) -> &SiteCounts {
        self.rows.last().expect("summary always has an All row")
    }
}

pub fn summarize(dataset: &Dataset) -> DatasetSummary {
    use std::collections::HashSet;
    #[derive(Default)]
    struct Sets {
        urls: HashSet<u64>,
        posts: HashSet<u64>,
        phashes: HashSet<u64>,
        phones: HashSet<u64>,
    }
    impl Sets {
        fn add(&mut self, r: &AdRecord) {
            self.urls.insert(r.url);
            self.posts.insert(r.post_key);
            self.phashes.extend(&r.phashes);
            self.phones.extend(&r.phones);
        }
        fn counts(&self, site: String) -> SiteCounts {
            SiteCounts {
                site,
                urls: self.urls.len() as u64,
                unique_posts: self.posts.len() as u64,
                unique_phashes: self.phashes.len() as u64,
                unique_phones: self.phones.len() as u64,
            }
        }
    }

    let mut per_site: HashMap<u32, Sets> = HashMap::new();
    let mut all = Sets::default();
    for record in &dataset.records {
        per_site.entry(record.site).or_default().add(record);
        all.add(record);
    }
    let mut sites: Vec<u32> = per_site.keys().copied().collect();
    sites.sort_unstable();
    let mut rows: Vec<SiteCounts> = sites
        .iter()
        .map(|s| per_site[s].counts(s.to_string()))
        .collect();
    rows.push(all.counts("All".to_string()));
    DatasetSummary { rows }
}

/// Keeps records dated within `[as_of - days, as_of]`. When `as_of` is not
/// given, the latest date in the dataset is used.
pub fn filter_window(dataset: Dataset, days: u32, as_of: Option<NaiveDate>) -> Dataset {
    let as_of = match as_of.or_else(|| dataset.records.iter().map(|r| r.post_date).max()) {
        Some(d) => d,
        None => return dataset,
    };
    let cutoff = as_of - chrono::Duration::days(i64::from(days));
    Dataset {
        records: dataset
            .records
            .into_iter()
            .filter(|r| r.post_date >= cutoff && r.post_date <= as_of)
            .collect(),
        source_tag: dataset.source_tag,
    }
}

pub fn restrict_to_site(dataset: &Dataset, site: u32) -> Dataset {
    Dataset {
        records: dataset
            .records
            .iter()
            .filter(|r| r.site == site)
            .cloned()
            .collect(),
        source_tag: format!("{}#site{}", dataset.source_tag, site),
    }
}

impl Dataset {
    /// post_key -> post text, shared with the records.
    pub fn text_index(&self) -> HashMap<u64, Arc<str>> {
        let mut map = HashMap::new();
        for r in &self.records {
            map.entry(r.post_key)
                .or_insert_with(|| Arc::clone(&r.post_text));
        }
        map
    }
}

fn write_json_str(out: &mut String, s: &str) {
    // serde_json string escaping, straight into the line buffer.
    out.push_str(&serde_json::to_string(s).expect("string serialization cannot fail"));
}

/// Canonical line for one record: scalar phash/phone when there is exactly
/// one, JSON array when merged, null when absent.
fn serialize_record_line(record: &AdRecord, out: &mut String) {
    out.push_str(&format!(
        "{{\"url\":{},\"site\":{},\"post_masked\":",
        record.url, record.site
    ));
    write_json_str(out, &record.post_text);
    out.push_str(&format!(",\"post_int\":{},\"phone_int\":", record.post_key));
    match record.phones.as_slice() {
        [] => out.push_str("null"),
        [one] => out.push_str(&one.to_string()),
        many => {
            out.push('[');
            for (i, p) in many.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&p.to_string());
            }
            out.push(']');
        }
    }
    out.push_str(",\"phash16\":");
    match record.phashes.as_slice() {
        [] => out.push_str("null"),
        [one] => {
            out.push('"');
            out.push_str(&format_phash16(*one));
            out.push('"');
        }
        many => {
            out.push('[');
            for (i, p) in many.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('"');
                out.push_str(&format_phash16(*p));
                out.push('"');
            }
            out.push(']');
        }
    }
    out.push_str(&format!(
        ",\"post_date\":\"{}\",\"target_city\":",
        record.post_date.format("%Y-%m-%d")
    ));
    write_json_str(out, &record.target_city);
    out.push_str(",\"target_state\":");
    write_json_str(out, &record.target_state);
    out.push('}');
}

pub fn serialize_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    for record in &dataset.records {
        serialize_record_line(record, &mut out);
        out.push('\n');
    }
    out
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), IngestError> {
    let mut file = File::create(path).map_err(IngestError::Write)?;
    file.write_all(serialize_dataset(dataset).as_bytes())
        .map_err(IngestError::Write)
}
