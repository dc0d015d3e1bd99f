//! Synthetic dataset generation with planted ground truth.
//!
//! Real ground truth for ad linkage cannot be shared, so correctness is
//! judged against generated datasets instead: a known set of posting
//! entities, each with its own vocabulary, images, and phones, plus the
//! two noise mechanisms that create a giant component in real data —
//! generic images attached across entities and images misappropriated
//! from one entity by another. `score_recovery` then measures how well a
//! component assignment rediscovers the planted entities.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gcfilter::ComponentAssignment;
use crate::graph::ArtifactId;
use crate::ingest::{AdRecord, Dataset};
use crate::similarity::fnv1a64;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("failed to read or write truth file: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad truth file at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("invalid generator config: {0}")]
    BadConfig(String),
    #[error("assignment is missing post key {post_key} present in ground truth")]
    MissingAssignment { post_key: u64 },
}

/// Everything the generator needs. The defaults form a small
/// illustrative world; [`SynthConfig::fixture`] is the frozen CI
/// profile (~50k ads, seed 7), and the larger profiles scale its
/// entity count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_entities: usize,
    /// Inclusive ad-count range per entity.
    pub posts_per_entity: (usize, usize),
    /// Inclusive owned-image-pool range per entity.
    pub phashes_per_entity: (usize, usize),
    /// Inclusive range of owned images attached to a single ad,
    /// clamped to the entity's pool size.
    pub phashes_per_ad: (usize, usize),
    /// Inclusive phone-count range per entity.
    pub phones_per_entity: (usize, usize),
    /// Pool of generic images shared across entities.
    pub generic_phash_count: usize,
    /// Per-ad chance of attaching one generic image.
    pub attach_probability: f64,
    /// Fraction of entities that use generic images at all. Everyone
    /// else never attaches one, so their components stay clean — the
    /// realistic split between stock-photo users and original posters.
    pub generic_entity_fraction: f64,
    /// Per-ad chance of attaching an image owned by another entity.
    pub misappropriation_probability: f64,
    /// Tokens in each entity's private vocabulary.
    pub entity_token_pool: usize,
    /// Tokens in the global shared vocabulary.
    pub shared_token_pool: usize,
    pub tokens_per_post: usize,
    /// Per-ad chance the written location is a messy variant or junk.
    pub location_noise_rate: f64,
    /// Fraction of entities that target cities uniformly instead of a
    /// home city (a wide-scatter posting profile).
    pub scatter_fraction: f64,
    pub sites: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_entities: 500,
            posts_per_entity: (60, 140),
            phashes_per_entity: (3, 9),
            phashes_per_ad: (1, 3),
            phones_per_entity: (1, 3),
            generic_phash_count: 40,
            attach_probability: 0.02,
            generic_entity_fraction: 1.0,
            misappropriation_probability: 0.01,
            entity_token_pool: 25,
            shared_token_pool: 150,
            tokens_per_post: 12,
            location_noise_rate: 0.15,
            scatter_fraction: 0.02,
            sites: 4,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// The frozen CI fixture: ~50k ads, seed 7.
    ///
    /// Shaped so the noise rewards different strategies honestly:
    /// slightly over half the entities share stock images drawn from a
    /// large pool, so the giant component is held together by many
    /// individually weak bridges rather than a few hubs, while each
    /// entity keeps a deep pool of its own images. A pairwise
    /// classifier can cut every cross-entity edge; deleting the most
    /// centrally ranked vertices cannot reach all the redundant glue.
    pub fn fixture() -> Self {
        SynthConfig {
            n_entities: 2_950,
            posts_per_entity: (10, 24),
            phashes_per_entity: (8, 16),
            phashes_per_ad: (2, 4),
            phones_per_entity: (1, 2),
            generic_phash_count: 2_500,
            attach_probability: 0.25,
            generic_entity_fraction: 0.55,
            misappropriation_probability: 0.002,
            entity_token_pool: 25,
            shared_token_pool: 150,
            tokens_per_post: 12,
            location_noise_rate: 0.15,
            scatter_fraction: 0.02,
            sites: 4,
            seed: 7,
        }
    }

    /// ~100k ads; the CI performance profile.
    pub fn profile_100k() -> Self {
        SynthConfig {
            n_entities: 5_900,
            generic_phash_count: 5_000,
            ..SynthConfig::fixture()
        }
    }

    /// ~1M ads; the workstation performance profile.
    pub fn profile_1m() -> Self {
        SynthConfig {
            n_entities: 59_000,
            generic_phash_count: 50_000,
            ..SynthConfig::fixture()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "fixture" => Some(SynthConfig::fixture()),
            "100k" => Some(SynthConfig::profile_100k()),
            "1m" => Some(SynthConfig::profile_1m()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::BadConfig(msg));
        if self.n_entities == 0 {
            return bad("n_entities must be at least 1".into());
        }
        for (name, (lo, hi)) in [
            ("posts_per_entity", self.posts_per_entity),
            ("phashes_per_entity", self.phashes_per_entity),
            ("phashes_per_ad", self.phashes_per_ad),
            ("phones_per_entity", self.phones_per_entity),
        ] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) is empty or zero"));
            }
        }
        for (name, p) in [
            ("attach_probability", self.attach_probability),
            ("generic_entity_fraction", self.generic_entity_fraction),
            (
                "misappropriation_probability",
                self.misappropriation_probability,
            ),
            ("location_noise_rate", self.location_noise_rate),
            ("scatter_fraction", self.scatter_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.attach_probability > 0.0 && self.generic_phash_count == 0 {
            return bad("attach_probability > 0 needs generic_phash_count > 0".into());
        }
        if self.entity_token_pool == 0 || self.shared_token_pool == 0 {
            return bad("token pools must be non-empty".into());
        }
        if self.tokens_per_post == 0 {
            return bad("tokens_per_post must be at least 1".into());
        }
        if self.sites == 0 {
            return bad("sites must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let config: SynthConfig =
            toml::from_str(text).map_err(|e| SynthError::BadConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// Cities the generator writes, all resolvable through the bundled
/// gazetteer fixtures; each has at least one messy variant the overlay
/// covers, so location noise stays fixable downstream.
const CITIES: &[(&str, &str)] = &[
    ("Fort Worth", "TX"),
    ("Dallas", "TX"),
    ("Houston", "TX"),
    ("Austin", "TX"),
    ("New York", "NY"),
    ("Las Vegas", "NV"),
    ("Philadelphia", "PA"),
    ("St. Louis", "MO"),
    ("Kansas City", "MO"),
    ("New Orleans", "LA"),
    ("San Francisco", "CA"),
    ("Atlanta", "GA"),
    ("Chicago", "IL"),
    ("Indianapolis", "IN"),
    ("Oklahoma City", "OK"),
    ("Seattle", "WA"),
    ("Denver", "CO"),
    ("Miami", "FL"),
    ("Boston", "MA"),
    ("Detroit", "MI"),
    ("Phoenix", "AZ"),
    ("Salt Lake City", "UT"),
];

/// Messy spellings per city index, all present in the overlay fixture.
const VARIANTS: &[(usize, &str, &str)] = &[
    (0, "Ft Worth", "TX"),
    (1, "Dallas/Fort Worth", "Texas"),
    (1, "Dallas", "Texas"),
    (2, "H-Town", "TX"),
    (2, "Houston", "Texas"),
    (3, "Austin", "Texas"),
    (4, "NYC", "NY"),
    (4, "The Big Apple", "NY"),
    (5, "Vegas", "NV"),
    (6, "Philly", "PA"),
    (6, "Philadelphia", "Pennsylvania"),
    (7, "Saint Louis", "MO"),
    (7, "St Louis", "MO"),
    (8, "KC", "MO"),
    (9, "Nola", "LA"),
    (10, "San Fran", "CA"),
    (10, "SF", "CA"),
    (11, "ATL", "GA"),
    (11, "Atlanta", "Georgia"),
    (12, "Chi Town", "IL"),
    (12, "Chicago", "Illinois"),
    (13, "Indy", "IN"),
    (14, "OKC", "OK"),
    (15, "Seattle", "Washington"),
    (16, "Denver", "Colorado"),
    (17, "Miami", "Florida"),
    (18, "Boston", "Massachusetts"),
    (19, "Detroit", "Michigan"),
    (20, "Phoenix", "Arizona"),
    (21, "SLC", "UT"),
];

/// Junk locations no gazetteer or overlay can fix.
const JUNK_LOCATIONS: &[(&str, &str)] = &[
    ("Outcall Only", ""),
    ("Upscale Location", "??"),
    ("Everywhere", "USA"),
];

/// Share of noisy ads that get junk instead of a fixable variant.
const JUNK_SHARE: f64 = 0.03;
/// Chance a non-scatter ad targets the entity's home city.
const HOME_BIAS: f64 = 0.9;
/// Chance an ad carries one of the entity's phones.
const CONTACT_RATE: f64 = 0.65;
/// Chance each non-leading token comes from the entity's own pool.
const ENTITY_TOKEN_SHARE: f64 = 0.65;
const WINDOW_DAYS: i64 = 180;

fn window_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 1).expect("static date")
}

/// Stream-separated deterministic seeding.
fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn phash_key(seed: u64, entity: usize, slot: usize) -> u64 {
    fnv1a64(format!("phash:{seed}:{entity}:{slot}").as_bytes())
}

fn phone_key(seed: u64, entity: usize, slot: usize) -> u64 {
    fnv1a64(format!("phone:{seed}:{entity}:{slot}").as_bytes())
}

fn generic_key(seed: u64, slot: usize) -> u64 {
    fnv1a64(format!("generic:{seed}:{slot}").as_bytes())
}

/// Per-entity facts fixed before any ads are generated, so entities can
/// reference each other (misappropriation) without ordering effects.
struct EntityMeta {
    n_posts: usize,
    phash_keys: Vec<u64>,
    phone_keys: Vec<u64>,
    home: usize,
    sites: Vec<u32>,
    scatter: bool,
    promiscuous: bool,
    url_base: u64,
}

/// The planted labels: which entity produced each post, and which entity
/// owns each non-generic artifact.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    post_to_entity: BTreeMap<u64, u32>,
    artifact_owners: BTreeMap<ArtifactId, Vec<u32>>,
}

impl GroundTruth {
    pub fn entity_of(&self, post_key: u64) -> Option<u32> {
        self.post_to_entity.get(&post_key).copied()
    }

    pub fn posts(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.post_to_entity.iter().map(|(&k, &e)| (k, e))
    }

    pub fn len(&self) -> usize {
        self.post_to_entity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.post_to_entity.is_empty()
    }

    /// Entities owning an artifact; empty for generic artifacts.
    pub fn owners(&self, artifact: ArtifactId) -> &[u32] {
        self.artifact_owners
            .get(&artifact)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn write(&self, path: &Path) -> Result<(), SynthError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "post_key\tentity_id")?;
        for (&key, &entity) in &self.post_to_entity {
            writeln!(out, "{key}\t{entity}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, SynthError> {
        let reader = BufReader::new(File::open(path)?);
        let mut truth = GroundTruth::default();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            if lineno == 1 || line.is_empty() {
                continue;
            }
            let bad = |reason: &str| SynthError::Format {
                line: lineno,
                reason: reason.to_string(),
            };
            let mut fields = line.split('\t');
            let key: u64 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("bad post key"))?;
            let entity: u32 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("bad entity id"))?;
            truth.post_to_entity.insert(key, entity);
        }
        Ok(truth)
    }
}

/// Generates the dataset and its ground truth. Byte-identical for a
/// fixed config; entities are generated independently and concatenated
/// in entity order.
pub fn generate(config: &SynthConfig) -> Result<(Dataset, GroundTruth), SynthError> {
    config.validate()?;
    let seed = config.seed;

    // Pass 1: per-entity structure, sequential prefix sums for URLs.
    let mut metas: Vec<EntityMeta> = Vec::with_capacity(config.n_entities);
    let mut url_cursor = 0u64;
    for i in 0..config.n_entities {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1, i as u64));
        let n_posts = rng.gen_range(config.posts_per_entity.0..=config.posts_per_entity.1);
        let n_phashes = rng.gen_range(config.phashes_per_entity.0..=config.phashes_per_entity.1);
        let n_phones = rng.gen_range(config.phones_per_entity.0..=config.phones_per_entity.1);
        let home = rng.gen_range(0..CITIES.len());
        let n_sites = rng.gen_range(1..=config.sites.min(3)) as usize;
        let mut sites: Vec<u32> = (0..n_sites)
            .map(|_| rng.gen_range(1..=config.sites))
            .collect();
        sites.sort_unstable();
        sites.dedup();
        let scatter = rng.gen_bool(config.scatter_fraction);
        let promiscuous = rng.gen_bool(config.generic_entity_fraction);
        metas.push(EntityMeta {
            n_posts,
            phash_keys: (0..n_phashes).map(|j| phash_key(seed, i, j)).collect(),
            phone_keys: (0..n_phones).map(|j| phone_key(seed, i, j)).collect(),
            home,
            sites,
            scatter,
            promiscuous,
            url_base: url_cursor,
        });
        url_cursor += n_posts as u64;
    }

    let generic_keys: Vec<u64> = (0..config.generic_phash_count)
        .map(|g| generic_key(seed, g))
        .collect();

    // Pass 2: ads, parallel per entity, deterministic order.
    let per_entity: Vec<Vec<AdRecord>> = metas
        .par_iter()
        .enumerate()
        .map(|(i, meta)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 2, i as u64));
            let mut records = Vec::with_capacity(meta.n_posts);
            for k in 0..meta.n_posts {
                records.push(generate_ad(
                    config,
                    &metas,
                    &generic_keys,
                    i,
                    meta,
                    k,
                    &mut rng,
                ));
            }
            records
        })
        .collect();

    let mut truth = GroundTruth::default();
    for (i, meta) in metas.iter().enumerate() {
        for (j, &key) in meta.phash_keys.iter().enumerate() {
            let _ = j;
            truth
                .artifact_owners
                .entry(ArtifactId::phash(key))
                .or_default()
                .push(i as u32);
        }
        for &key in &meta.phone_keys {
            truth
                .artifact_owners
                .entry(ArtifactId::contact(key))
                .or_default()
                .push(i as u32);
        }
    }
    for &key in &generic_keys {
        truth
            .artifact_owners
            .entry(ArtifactId::phash(key))
            .or_default();
    }

    let mut records = Vec::with_capacity(url_cursor as usize);
    for (i, entity_records) in per_entity.into_iter().enumerate() {
        for r in &entity_records {
            truth.post_to_entity.insert(r.post_key, i as u32);
        }
        records.extend(entity_records);
    }

    Ok((
        Dataset {
            records,
            source_tag: "synth".to_string(),
        },
        truth,
    ))
}

fn generate_ad(
    config: &SynthConfig,
    metas: &[EntityMeta],
    generic_keys: &[u64],
    entity: usize,
    meta: &EntityMeta,
    ad_index: usize,
    rng: &mut ChaCha8Rng,
) -> AdRecord {
    // Text: a leading entity marker token, then a mix of entity-pool and
    // shared-pool tokens. Distinct entities can never produce identical
    // texts because of the marker.
    let mut text = format!("e{entity}t0");
    for _ in 1..config.tokens_per_post {
        let token = if rng.gen_bool(ENTITY_TOKEN_SHARE) {
            format!("e{entity}t{}", rng.gen_range(0..config.entity_token_pool))
        } else {
            format!("s{}", rng.gen_range(0..config.shared_token_pool))
        };
        text.push(' ');
        text.push_str(&token);
    }

    // Owned images: a configured number of distinct picks from the pool.
    let lo = config.phashes_per_ad.0.min(meta.phash_keys.len());
    let hi = config.phashes_per_ad.1.min(meta.phash_keys.len());
    let n_own = rng.gen_range(lo..=hi);
    let mut phashes: Vec<u64> = Vec::with_capacity(n_own + 2);
    let mut picked: Vec<usize> = Vec::with_capacity(n_own);
    while picked.len() < n_own {
        let j = rng.gen_range(0..meta.phash_keys.len());
        if !picked.contains(&j) {
            picked.push(j);
            phashes.push(meta.phash_keys[j]);
        }
    }
    if meta.promiscuous && rng.gen_bool(config.attach_probability) {
        phashes.push(generic_keys[rng.gen_range(0..generic_keys.len())]);
    }
    if metas.len() > 1 && rng.gen_bool(config.misappropriation_probability) {
        let mut victim = rng.gen_range(0..metas.len() - 1);
        if victim >= entity {
            victim += 1;
        }
        let pool = &metas[victim].phash_keys;
        phashes.push(pool[rng.gen_range(0..pool.len())]);
    }
    phashes.sort_unstable();
    phashes.dedup();

    let phones = if rng.gen_bool(CONTACT_RATE) {
        vec![meta.phone_keys[rng.gen_range(0..meta.phone_keys.len())]]
    } else {
        Vec::new()
    };

    let city_idx = if meta.scatter || !rng.gen_bool(HOME_BIAS) {
        rng.gen_range(0..CITIES.len())
    } else {
        meta.home
    };
    let (mut city, mut state) = CITIES[city_idx];
    if rng.gen_bool(config.location_noise_rate) {
        if rng.gen_bool(JUNK_SHARE) {
            let junk = JUNK_LOCATIONS[rng.gen_range(0..JUNK_LOCATIONS.len())];
            city = junk.0;
            state = junk.1;
        } else {
            let options: Vec<&(usize, &str, &str)> = VARIANTS
                .iter()
                .filter(|(idx, _, _)| *idx == city_idx)
                .collect();
            let &&(_, raw_city, raw_state) = &options[rng.gen_range(0..options.len())];
            city = raw_city;
            state = raw_state;
        }
    }

    let site = meta.sites[rng.gen_range(0..meta.sites.len())];
    let post_date = window_start() + Duration::days(rng.gen_range(0..WINDOW_DAYS));

    AdRecord {
        url: meta.url_base + ad_index as u64,
        site,
        post_key: fnv1a64(text.as_bytes()),
        post_text: Arc::from(text),
        phashes,
        phones,
        post_date,
        target_city: Arc::from(city),
        target_state: Arc::from(state),
    }
}

/// Pair-level recovery quality of an assignment against planted truth.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Adjusted Rand index between the two partitions.
    pub ari: f64,
    pub posts: usize,
}

fn pairs(n: u64) -> u128 {
    let n = n as u128;
    n * (n - 1) / 2
}

/// Scores how well final components match planted entities, over all
/// unordered post pairs. Contingency-table closed forms only — no pair
/// enumeration.
pub fn score_recovery(
    assignment: &ComponentAssignment,
    truth: &GroundTruth,
) -> Result<RecoveryScore, SynthError> {
    let mut contingency: HashMap<(u32, u32), u64> = HashMap::new();
    let mut by_entity: HashMap<u32, u64> = HashMap::new();
    let mut by_component: HashMap<u32, u64> = HashMap::new();
    let mut n_posts = 0u64;
    for (post_key, entity) in truth.posts() {
        let Some(component) = assignment.component_of(post_key) else {
            return Err(SynthError::MissingAssignment { post_key });
        };
        *contingency.entry((entity, component)).or_default() += 1;
        *by_entity.entry(entity).or_default() += 1;
        *by_component.entry(component).or_default() += 1;
        n_posts += 1;
    }

    let same_both: u128 = contingency.values().map(|&c| pairs(c)).sum();
    let same_truth: u128 = by_entity.values().map(|&c| pairs(c)).sum();
    let same_pred: u128 = by_component.values().map(|&c| pairs(c)).sum();
    let total = pairs(n_posts);

    let precision = if same_pred == 0 {
        1.0
    } else {
        same_both as f64 / same_pred as f64
    };
    let recall = if same_truth == 0 {
        1.0
    } else {
        same_both as f64 / same_truth as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };

    let ari = if total == 0 {
        1.0
    } else {
        let expected = same_truth as f64 * same_pred as f64 / total as f64;
        let max_index = 0.5 * (same_truth as f64 + same_pred as f64);
        if (max_index - expected).abs() < f64::EPSILON {
            1.0
        } else {
            (same_both as f64 - expected) / (max_index - expected)
        }
    };

    Ok(RecoveryScore {
        precision,
        recall,
        f1,
        ari,
        posts: n_posts as usize,
    })
}
