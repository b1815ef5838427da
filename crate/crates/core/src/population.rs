//! Synthetic and ingested member populations.
//!
//! A [`Population`] is a set of [`UserProfile`]s plus the skill and location
//! catalogs they draw from. Synthetic populations come from [`generate`]:
//! Zipf-weighted catalogs, a zero-inflated discretized log-normal skill count
//! and popularity-weighted sampling of distinct skills. Real datasets enter
//! through [`ingest`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Upper bound on the skills a member can list.
pub const MAX_SKILLS: usize = 50;

/// Modeled platform size used when extrapolating to the whole user base.
pub const DEFAULT_TOTAL_BASE: u64 = 970_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    pub location: Option<String>,
    pub skills: Vec<String>,
}

impl UserProfile {
    pub fn has_skills(&self) -> bool {
        !self.skills.is_empty()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.skills.len() > MAX_SKILLS {
            return Err(format!(
                "user {:?} lists {} skills, more than the maximum of {MAX_SKILLS}",
                self.id,
                self.skills.len()
            ));
        }
        let mut seen = HashSet::with_capacity(self.skills.len());
        for s in &self.skills {
            if !seen.insert(s.as_str()) {
                return Err(format!(
                    "user {:?} lists skill {s:?} more than once",
                    self.id
                ));
            }
        }
        Ok(())
    }
}

/// A catalog entry: a skill or location label with its generation weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    seed: Option<u64>,
    total_base: u64,
    n_users: usize,
    skill_catalog: Vec<CatalogEntry>,
    location_catalog: Vec<CatalogEntry>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    #[serde(rename = "_meta")]
    meta: Meta,
}

/// An immutable collection of profiles with their catalogs.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    users: Vec<UserProfile>,
    skill_catalog: Vec<CatalogEntry>,
    location_catalog: Vec<CatalogEntry>,
    seed: Option<u64>,
    total_base: u64,
}

impl Population {
    /// Assemble a population, checking every profile and catalog invariant.
    pub fn new(
        users: Vec<UserProfile>,
        skill_catalog: Vec<CatalogEntry>,
        location_catalog: Vec<CatalogEntry>,
        seed: Option<u64>,
        total_base: u64,
    ) -> Result<Self> {
        let skills: HashSet<&str> = skill_catalog.iter().map(|c| c.name.as_str()).collect();
        let locations: HashSet<&str> = location_catalog.iter().map(|c| c.name.as_str()).collect();
        let mut ids = HashSet::with_capacity(users.len());
        for u in &users {
            u.validate().map_err(Error::Data)?;
            if !ids.insert(u.id.as_str()) {
                return Err(Error::data(format!("duplicate user id {:?}", u.id)));
            }
            if let Some(s) = u.skills.iter().find(|s| !skills.contains(s.as_str())) {
                return Err(Error::data(format!(
                    "user {:?}: skill {s:?} missing from catalog",
                    u.id
                )));
            }
            if let Some(l) = &u.location {
                if !locations.contains(l.as_str()) {
                    return Err(Error::data(format!(
                        "user {:?}: location {l:?} missing from catalog",
                        u.id
                    )));
                }
            }
        }
        Ok(Self {
            users,
            skill_catalog,
            location_catalog,
            seed,
            total_base,
        })
    }

    /// Build a population whose catalogs are inferred from the profiles,
    /// weighting every label by its frequency.
    pub fn from_profiles(users: Vec<UserProfile>, total_base: u64) -> Result<Self> {
        let mut skills: BTreeMap<&str, u64> = BTreeMap::new();
        let mut locations: BTreeMap<&str, u64> = BTreeMap::new();
        for u in &users {
            for s in &u.skills {
                *skills.entry(s).or_default() += 1;
            }
            if let Some(l) = &u.location {
                *locations.entry(l).or_default() += 1;
            }
        }
        let to_catalog = |m: BTreeMap<&str, u64>| {
            m.into_iter()
                .map(|(name, n)| CatalogEntry {
                    name: name.to_string(),
                    weight: n as f64,
                })
                .collect::<Vec<_>>()
        };
        let skill_catalog = to_catalog(skills);
        let location_catalog = to_catalog(locations);
        Self::new(users, skill_catalog, location_catalog, None, total_base)
    }

    pub fn users(&self) -> &[UserProfile] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn skill_catalog(&self) -> &[CatalogEntry] {
        &self.skill_catalog
    }

    pub fn location_catalog(&self) -> &[CatalogEntry] {
        &self.location_catalog
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn total_base(&self) -> u64 {
        self.total_base
    }

    pub fn user(&self, id: &str) -> Option<&UserProfile> {
        self.users.iter().find(|u| u.id == id)
    }

    /// Ids of members that list no skill at all.
    pub fn zero_skill_ids(&self) -> Vec<&str> {
        self.users
            .iter()
            .filter(|u| !u.has_skills())
            .map(|u| u.id.as_str())
            .collect()
    }

    /// Canonical JSON-lines serialization: one `_meta` header line followed
    /// by one profile per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = MetaLine {
            meta: Meta {
                seed: self.seed,
                total_base: self.total_base,
                n_users: self.users.len(),
                skill_catalog: self.skill_catalog.clone(),
                location_catalog: self.location_catalog.clone(),
            },
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for u in &self.users {
            serde_json::to_writer(&mut w, u)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}

/// On-disk profile formats accepted by [`ingest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProfileFormat {
    /// One JSON object per line, optionally preceded by a `_meta` header.
    #[default]
    JsonLines,
}

impl FromStr for ProfileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json-lines" | "jsonlines" | "ndjson" => Ok(ProfileFormat::JsonLines),
            other => Err(Error::config(format!(
                "unknown profile format {other:?}, expected jsonl"
            ))),
        }
    }
}

/// Result of reading a profile file.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub population: Population,
    pub warnings: Vec<String>,
    /// Members retained even though they list no skill.
    pub zero_skill_ids: Vec<String>,
}

/// Read a profile file. Catalogs come from the `_meta` header when present
/// and are otherwise inferred from label frequencies.
pub fn ingest(path: &Path, format: ProfileFormat) -> Result<Ingested> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        ProfileFormat::JsonLines => read_jsonl(BufReader::new(f), path),
    }
}

/// Parse JSON-lines profiles from any reader; `origin` labels error messages.
pub fn read_jsonl<R: Read>(reader: BufReader<R>, origin: &Path) -> Result<Ingested> {
    let mut meta: Option<Meta> = None;
    let mut users = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let record_err = |line: usize, message: String| Error::Record {
        path: origin.to_path_buf(),
        line,
        message,
    };
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if users.is_empty() && meta.is_none() && trimmed.starts_with("{\"_meta\"") {
            let m: MetaLine = serde_json::from_str(trimmed)
                .map_err(|e| record_err(lineno, format!("malformed header: {e}")))?;
            meta = Some(m.meta);
            continue;
        }
        let u: UserProfile = serde_json::from_str(trimmed)
            .map_err(|e| record_err(lineno, format!("malformed record: {e}")))?;
        u.validate().map_err(|m| record_err(lineno, m))?;
        if let Some(first) = ids.insert(u.id.clone(), lineno) {
            return Err(record_err(
                lineno,
                format!("duplicate id {:?} (first seen on line {first})", u.id),
            ));
        }
        users.push(u);
    }

    let mut warnings = Vec::new();
    if users.is_empty() {
        warnings.push(format!("{} contains no profiles", origin.display()));
    }
    let zero_skill_ids: Vec<String> = users
        .iter()
        .filter(|u| !u.has_skills())
        .map(|u| u.id.clone())
        .collect();
    if !zero_skill_ids.is_empty() {
        warnings.push(format!("{} profiles list no skills", zero_skill_ids.len()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let population = match meta {
        Some(m) => Population::new(
            users,
            m.skill_catalog,
            m.location_catalog,
            m.seed,
            m.total_base,
        )?,
        None => Population::from_profiles(users, DEFAULT_TOTAL_BASE)?,
    };
    Ok(Ingested {
        population,
        warnings,
        zero_skill_ids,
    })
}

/// Parameters of the zero-inflated, truncated, discretized log-normal law
/// for the number of skills a member lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillCountLaw {
    /// Mean of ln(count) before truncation.
    pub log_mean: f64,
    /// Standard deviation of ln(count) before truncation.
    pub log_sd: f64,
}

impl Default for SkillCountLaw {
    fn default() -> Self {
        // Median 15 among members with skills, roughly a quarter above 25.
        Self {
            log_mean: 2.9,
            log_sd: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub n_skills: usize,
    pub skill_popularity_exponent: f64,
    pub n_locations: usize,
    pub location_popularity_exponent: f64,
    pub p_zero_skills: f64,
    pub p_missing_location: f64,
    pub skill_count: SkillCountLaw,
    pub total_base: u64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_users: 100_000,
            n_skills: 5_000,
            skill_popularity_exponent: 1.0,
            n_locations: 200,
            location_popularity_exponent: 1.0,
            p_zero_skills: 0.25,
            p_missing_location: 0.01,
            skill_count: SkillCountLaw::default(),
            total_base: DEFAULT_TOTAL_BASE,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    /// Reference population for the estimator-vs-oracle checks: a small,
    /// steep skill catalog and a few large locations keep audiences above a
    /// floor of 30 for enough skills to fit at most quantiles.
    pub fn calibrated() -> Self {
        Self {
            n_skills: 300,
            skill_popularity_exponent: 1.8,
            n_locations: 5,
            location_popularity_exponent: 0.3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{name} must be a positive finite number, got {v}"
                )))
            }
        };
        let probability = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if self.n_users == 0 || self.n_skills == 0 || self.n_locations == 0 {
            return Err(Error::config(
                "n_users, n_skills and n_locations must be positive",
            ));
        }
        if self.n_users > u32::MAX as usize {
            return Err(Error::config("n_users exceeds the supported maximum"));
        }
        positive("skill_popularity_exponent", self.skill_popularity_exponent)?;
        positive(
            "location_popularity_exponent",
            self.location_popularity_exponent,
        )?;
        positive("skill_count.log_sd", self.skill_count.log_sd)?;
        if !self.skill_count.log_mean.is_finite() {
            return Err(Error::config("skill_count.log_mean must be finite"));
        }
        probability("p_zero_skills", self.p_zero_skills)?;
        probability("p_missing_location", self.p_missing_location)?;
        Ok(())
    }
}

/// Unnormalized Zipf weights `1 / rank^exponent` for ranks 1..=n.
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

fn catalog(prefix: &str, weights: Vec<f64>) -> Vec<CatalogEntry> {
    let width = weights.len().to_string().len();
    weights
        .into_iter()
        .enumerate()
        .map(|(i, weight)| CatalogEntry {
            name: format!("{prefix}{:0width$}", i + 1),
            weight,
        })
        .collect()
}

/// Draw `k` distinct indices by popularity-weighted sampling without
/// replacement. Rejection sampling first; if duplicates keep coming, the
/// remaining draws fall back to an explicit scan over the unpicked mass.
fn sample_distinct<R: Rng>(
    rng: &mut R,
    dist: &WeightedIndex<f64>,
    weights: &[f64],
    k: usize,
) -> Vec<usize> {
    let mut picked = Vec::with_capacity(k);
    let mut seen = HashSet::with_capacity(k);
    let mut budget = 64 * k + 64;
    while picked.len() < k && budget > 0 {
        budget -= 1;
        let i = dist.sample(rng);
        if seen.insert(i) {
            picked.push(i);
        }
    }
    while picked.len() < k {
        let rest: f64 = weights
            .iter()
            .enumerate()
            .filter(|(i, _)| !seen.contains(i))
            .map(|(_, w)| w)
            .sum();
        let mut target = rng.gen::<f64>() * rest;
        let mut chosen = None;
        for (i, w) in weights.iter().enumerate() {
            if seen.contains(&i) {
                continue;
            }
            chosen = Some(i);
            if target < *w {
                break;
            }
            target -= w;
        }
        let i = chosen.expect("k never exceeds the catalog size");
        seen.insert(i);
        picked.push(i);
    }
    picked
}

/// Generate a synthetic population. Identical configs give identical
/// populations, byte for byte after [`Population::write_jsonl`].
pub fn generate(config: &GeneratorConfig) -> Result<Population> {
    config.validate()?;
    let skill_weights = zipf_weights(config.n_skills, config.skill_popularity_exponent);
    let location_weights = zipf_weights(config.n_locations, config.location_popularity_exponent);
    let skill_dist =
        WeightedIndex::new(&skill_weights).map_err(|e| Error::config(e.to_string()))?;
    let location_dist =
        WeightedIndex::new(&location_weights).map_err(|e| Error::config(e.to_string()))?;
    let count_dist = LogNormal::new(config.skill_count.log_mean, config.skill_count.log_sd)
        .map_err(|e| Error::config(format!("skill count law: {e}")))?;
    let max_k = MAX_SKILLS.min(config.n_skills);

    let skill_catalog = catalog("sk", skill_weights.clone());
    let location_catalog = catalog("loc", location_weights);

    let mut rng = seed::rng(seed::derive(config.seed, b"population"));
    let id_width = config.n_users.to_string().len();
    let mut users = Vec::with_capacity(config.n_users);
    for i in 0..config.n_users {
        let location = if rng.gen::<f64>() < config.p_missing_location {
            None
        } else {
            Some(
                location_catalog[location_dist.sample(&mut rng)]
                    .name
                    .clone(),
            )
        };
        let k = if rng.gen::<f64>() < config.p_zero_skills {
            0
        } else {
            loop {
                let x: f64 = count_dist.sample(&mut rng);
                let k = x.round();
                if k >= 1.0 && k <= max_k as f64 {
                    break k as usize;
                }
            }
        };
        let skills = sample_distinct(&mut rng, &skill_dist, &skill_weights, k)
            .into_iter()
            .map(|j| skill_catalog[j].name.clone())
            .collect();
        users.push(UserProfile {
            id: format!("u{:0id_width$}", i + 1),
            location,
            skills,
        });
    }
    Population::new(
        users,
        skill_catalog,
        location_catalog,
        Some(config.seed),
        config.total_base,
    )
}

/// Population-level distribution statistics and plot data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n_users: usize,
    pub n_with_skills: usize,
    pub n_with_location: usize,
    pub zero_skill_fraction: f64,
    /// Median skill count among members listing at least one skill.
    pub median_skills: f64,
    /// Share of members with skills that list more than 25.
    pub frac_over_25_skills: f64,
    pub unique_skills: usize,
    pub skill_mentions: u64,
    pub mean_users_per_skill: f64,
    /// `skill_count_cdf[k - 1]` = P(count <= k | count >= 1), k = 1..=50.
    pub skill_count_cdf: Vec<f64>,
    /// `users_with_at_least[n - 1]` = members listing n or more skills.
    pub users_with_at_least: Vec<usize>,
    /// Skills with their audience size, most popular first.
    pub skill_audience: Vec<(String, u64)>,
    /// Locations with their audience size, most popular first.
    pub location_audience: Vec<(String, u64)>,
}

pub fn summarize(pop: &Population) -> DistributionSummary {
    let mut hist = [0usize; MAX_SKILLS + 1];
    let mut skills: HashMap<&str, u64> = HashMap::new();
    let mut locations: HashMap<&str, u64> = HashMap::new();
    let mut n_with_location = 0;
    for u in pop.users() {
        hist[u.skills.len()] += 1;
        for s in &u.skills {
            *skills.entry(s).or_default() += 1;
        }
        if let Some(l) = &u.location {
            n_with_location += 1;
            *locations.entry(l).or_default() += 1;
        }
    }
    let n_users = pop.len();
    let n_with_skills = n_users - hist[0];
    let skill_mentions: u64 = skills.values().sum();

    let mut skill_count_cdf = vec![0.0; MAX_SKILLS];
    let mut users_with_at_least = vec![0usize; MAX_SKILLS];
    if n_with_skills > 0 {
        let mut acc = 0usize;
        for k in 1..=MAX_SKILLS {
            acc += hist[k];
            skill_count_cdf[k - 1] = acc as f64 / n_with_skills as f64;
        }
    }
    let mut tail = 0usize;
    for n in (1..=MAX_SKILLS).rev() {
        tail += hist[n];
        users_with_at_least[n - 1] = tail;
    }

    let mut counts: Vec<f64> = pop
        .users()
        .iter()
        .filter(|u| u.has_skills())
        .map(|u| u.skills.len() as f64)
        .collect();
    counts.sort_by(f64::total_cmp);
    let median_skills = crate::methodology::quantile_sorted(&counts, 0.5).unwrap_or(0.0);
    let over_25 = users_with_at_least[25];

    let ranked = |m: HashMap<&str, u64>| {
        let mut v: Vec<(String, u64)> = m.into_iter().map(|(k, n)| (k.to_string(), n)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    };

    DistributionSummary {
        n_users,
        n_with_skills,
        n_with_location,
        zero_skill_fraction: if n_users == 0 {
            0.0
        } else {
            hist[0] as f64 / n_users as f64
        },
        median_skills,
        frac_over_25_skills: if n_with_skills == 0 {
            0.0
        } else {
            over_25 as f64 / n_with_skills as f64
        },
        unique_skills: skills.len(),
        skill_mentions,
        mean_users_per_skill: if skills.is_empty() {
            0.0
        } else {
            skill_mentions as f64 / skills.len() as f64
        },
        skill_count_cdf,
        users_with_at_least,
        skill_audience: ranked(skills),
        location_audience: ranked(locations),
    }
}

impl DistributionSummary {
    /// Skill-count CDF plot data: `skills,cdf`.
    pub fn write_skill_cdf_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["skills", "cdf"])?;
        for (i, p) in self.skill_count_cdf.iter().enumerate() {
            out.write_record([(i + 1).to_string(), format!("{p:.6}")])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Audience-size CDF plot data for skills and locations:
    /// `kind,audience_size,cdf`.
    pub fn write_audience_cdf_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["kind", "audience_size", "cdf"])?;
        for (kind, entries) in [
            ("skill", &self.skill_audience),
            ("location", &self.location_audience),
        ] {
            let mut sizes: Vec<u64> = entries.iter().map(|(_, n)| *n).collect();
            sizes.sort_unstable();
            let total = sizes.len() as f64;
            for (i, n) in sizes.iter().enumerate() {
                if i + 1 < sizes.len() && sizes[i + 1] == *n {
                    continue;
                }
                out.write_record([
                    kind.to_string(),
                    n.to_string(),
                    format!("{:.6}", (i + 1) as f64 / total),
                ])?;
            }
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn small_config(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_users: 2_000,
            n_skills: 500,
            n_locations: 20,
            seed,
            ..GeneratorConfig::default()
        }
    }

    fn profile(id: &str, location: Option<&str>, skills: &[&str]) -> UserProfile {
        UserProfile {
            id: id.into(),
            location: location.map(Into::into),
            skills: skills.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn all_zero_skills_when_probability_is_one() {
        let pop = generate(&GeneratorConfig {
            p_zero_skills: 1.0,
            ..small_config(1)
        })
        .unwrap();
        assert!(pop.users().iter().all(|u| u.skills.is_empty()));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small_config(7)).unwrap().to_jsonl_bytes();
        let b = generate(&small_config(7)).unwrap().to_jsonl_bytes();
        assert_eq!(a, b);
        let c = generate(&small_config(8)).unwrap().to_jsonl_bytes();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_profiles_respect_invariants() {
        let pop = generate(&GeneratorConfig {
            skill_popularity_exponent: 3.0,
            ..small_config(3)
        })
        .unwrap();
        for u in pop.users() {
            assert!(u.skills.len() <= MAX_SKILLS);
            let set: HashSet<_> = u.skills.iter().collect();
            assert_eq!(set.len(), u.skills.len());
        }
    }

    #[test]
    fn tiny_catalog_caps_skill_count() {
        let pop = generate(&GeneratorConfig {
            n_skills: 4,
            p_zero_skills: 0.0,
            ..small_config(5)
        })
        .unwrap();
        assert!(pop
            .users()
            .iter()
            .all(|u| (1..=4).contains(&u.skills.len())));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            GeneratorConfig {
                p_zero_skills: 1.5,
                ..small_config(0)
            },
            GeneratorConfig {
                n_users: 0,
                ..small_config(0)
            },
            GeneratorConfig {
                skill_popularity_exponent: 0.0,
                ..small_config(0)
            },
            GeneratorConfig {
                location_popularity_exponent: f64::NAN,
                ..small_config(0)
            },
            GeneratorConfig {
                p_missing_location: -0.1,
                ..small_config(0)
            },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn jsonl_round_trip_preserves_population() {
        let pop = generate(&small_config(11)).unwrap();
        let bytes = pop.to_jsonl_bytes();
        let back =
            read_jsonl(BufReader::new(Cursor::new(bytes.clone())), Path::new("mem")).unwrap();
        assert_eq!(back.population, pop);
        assert_eq!(back.population.to_jsonl_bytes(), bytes);
    }

    #[test]
    fn ingest_single_record_infers_catalog() {
        let data = r#"{"id":"a","location":"ES","skills":["x","y"]}"#;
        let got = read_jsonl(BufReader::new(Cursor::new(data)), Path::new("one.jsonl")).unwrap();
        assert_eq!(got.population.len(), 1);
        let names: Vec<_> = got
            .population
            .skill_catalog()
            .iter()
            .map(|c| c.name.as_str())
            .collect();
        assert_eq!(names, ["x", "y"]);
        assert_eq!(got.population.location_catalog()[0].name, "ES");
    }

    #[test]
    fn ingest_rejects_over_cap_with_line_number() {
        let skills: Vec<String> = (0..51).map(|i| format!("\"s{i}\"")).collect();
        let data = format!(
            "{{\"id\":\"a\",\"location\":null,\"skills\":[]}}\n{{\"id\":\"b\",\"location\":\"ES\",\"skills\":[{}]}}\n",
            skills.join(",")
        );
        let err =
            read_jsonl(BufReader::new(Cursor::new(data)), Path::new("cap.jsonl")).unwrap_err();
        match err {
            Error::Record { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("maximum of 50"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_duplicates_and_garbage() {
        let dup = "{\"id\":\"a\",\"location\":null,\"skills\":[]}\n{\"id\":\"a\",\"location\":null,\"skills\":[]}\n";
        let err = read_jsonl(BufReader::new(Cursor::new(dup)), Path::new("d")).unwrap_err();
        assert!(matches!(err, Error::Record { line: 2, .. }));

        let repeated = "{\"id\":\"a\",\"location\":null,\"skills\":[\"x\",\"x\"]}\n";
        let err = read_jsonl(BufReader::new(Cursor::new(repeated)), Path::new("r")).unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }));

        let garbage = "\n{\"id\":\"a\",\"location\":null,\"skills\":[]}\nnot json\n";
        let err = read_jsonl(BufReader::new(Cursor::new(garbage)), Path::new("g")).unwrap_err();
        assert!(matches!(err, Error::Record { line: 3, .. }));
    }

    #[test]
    fn ingest_empty_file_warns() {
        let got = read_jsonl(BufReader::new(Cursor::new("")), Path::new("empty")).unwrap();
        assert!(got.population.is_empty());
        assert_eq!(got.warnings.len(), 1);
    }

    #[test]
    fn ingest_keeps_and_flags_zero_skill_members() {
        let data = "{\"id\":\"a\",\"location\":\"ES\",\"skills\":[]}\n{\"id\":\"b\",\"location\":\"ES\",\"skills\":[\"x\"]}\n";
        let got = read_jsonl(BufReader::new(Cursor::new(data)), Path::new("z")).unwrap();
        assert_eq!(got.population.len(), 2);
        assert_eq!(got.zero_skill_ids, ["a"]);
    }

    #[test]
    fn summary_of_single_user() {
        let pop =
            Population::from_profiles(vec![profile("a", Some("L"), &["x", "y", "z"])], 1).unwrap();
        let s = summarize(&pop);
        assert_eq!(s.unique_skills, 3);
        assert_eq!(s.skill_count_cdf[1], 0.0);
        assert_eq!(s.skill_count_cdf[2], 1.0);
        assert_eq!(s.users_with_at_least[2], 1);
        assert_eq!(s.users_with_at_least[3], 0);
        assert_eq!(s.median_skills, 3.0);
    }

    #[test]
    fn mean_users_per_skill_matches_reported_aggregate() {
        // 8533 unique skills mentioned 78794 times in total.
        let mean = 78_794f64 / 8_533f64;
        assert!((mean - 9.234).abs() < 1e-3);
        assert_eq!(mean.round(), 9.0);
    }
}
