//! Per-N audience-size samples and their quantile vectors.
//!
//! For every eligible member a [`SelectionPlan`] fixes one ordering of their
//! skills. The audience for N skills is the member's location (in the
//! location scenarios) AND the first N skills of that ordering, so the
//! selections for N and N + 1 are nested.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{Oracle, OracleConfig};
use crate::population::MAX_SKILLS;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Selection {
    Random,
    LeastPopular,
}

/// Skills only or location plus skills, crossed with the selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scenario {
    pub use_location: bool,
    pub selection: Selection,
}

impl Scenario {
    pub const SK_R: Scenario = Scenario {
        use_location: false,
        selection: Selection::Random,
    };
    pub const SK_LP: Scenario = Scenario {
        use_location: false,
        selection: Selection::LeastPopular,
    };
    pub const LO_R: Scenario = Scenario {
        use_location: true,
        selection: Selection::Random,
    };
    pub const LO_LP: Scenario = Scenario {
        use_location: true,
        selection: Selection::LeastPopular,
    };
    pub const ALL: [Scenario; 4] = [Self::SK_R, Self::SK_LP, Self::LO_R, Self::LO_LP];

    /// Lower-case identifier used on the command line and in reports.
    pub fn key(&self) -> &'static str {
        match (self.use_location, self.selection) {
            (false, Selection::Random) => "sk_r",
            (false, Selection::LeastPopular) => "sk_lp",
            (true, Selection::Random) => "lo_r",
            (true, Selection::LeastPopular) => "lo_lp",
        }
    }

    pub fn label(&self) -> &'static str {
        match (self.use_location, self.selection) {
            (false, Selection::Random) => "Sk_R",
            (false, Selection::LeastPopular) => "Sk_LP",
            (true, Selection::Random) => "Lo_R",
            (true, Selection::LeastPopular) => "Lo_LP",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown scenario {s:?}, expected sk_r, sk_lp, lo_r or lo_lp"
                ))
            })
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.key())
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Why a member takes no part in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Excluded {
    NoSkills,
    NoLocation,
}

/// One member's fixed skill ordering; prefixes are the selections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionPlan {
    pub user: usize,
    pub order: Vec<u32>,
}

impl SelectionPlan {
    pub fn prefix(&self, n: usize) -> &[u32] {
        &self.order[..n.min(self.order.len())]
    }

    pub fn skill_names<'a>(&self, oracle: &Oracle<'a>) -> Vec<&'a str> {
        self.order.iter().map(|&s| oracle.skill_name(s)).collect()
    }
}

/// Order a member's skills for `selection`. Random draws a permutation seeded
/// by `(seed, member id)`; LeastPopular sorts ascending by worldwide audience,
/// ties by skill name.
pub fn plan_selection(
    oracle: &Oracle,
    user: usize,
    selection: Selection,
    seed: u64,
) -> Result<SelectionPlan, Excluded> {
    let skills = oracle.user_skill_ids(user);
    if skills.is_empty() {
        return Err(Excluded::NoSkills);
    }
    let mut order = skills.to_vec();
    match selection {
        Selection::Random => {
            let id = &oracle.population().users()[user].id;
            let mut rng = seed::rng(seed::derive(seed, id.as_bytes()));
            order.shuffle(&mut rng);
        }
        Selection::LeastPopular => {
            order.sort_by(|&a, &b| {
                oracle
                    .skill_audience(a)
                    .cmp(&oracle.skill_audience(b))
                    .then_with(|| oracle.skill_name(a).cmp(oracle.skill_name(b)))
            });
        }
    }
    Ok(SelectionPlan { user, order })
}

/// Whether `user` takes part in `scenario`.
pub fn eligibility(oracle: &Oracle, user: usize, scenario: Scenario) -> Result<(), Excluded> {
    if oracle.user_skill_ids(user).is_empty() {
        Err(Excluded::NoSkills)
    } else if scenario.use_location && oracle.user_location(user).is_none() {
        Err(Excluded::NoLocation)
    } else {
        Ok(())
    }
}

/// Exact audience sizes for one member, `counts[n - 1]` for N = n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRow {
    pub user: usize,
    pub counts: Vec<u64>,
}

/// Cached exact per-member rows for a scenario; the base for both the
/// sample matrix and bootstrap resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSamples {
    pub scenario: Scenario,
    pub rows: Vec<UserRow>,
}

impl ScenarioSamples {
    pub fn from_rows(scenario: Scenario, rows: Vec<UserRow>) -> Self {
        Self { scenario, rows }
    }
}

/// Query every eligible member's nested prefixes. Parallel over members;
/// the output order is the population order regardless of scheduling.
pub fn collect_samples(oracle: &Oracle, scenario: Scenario, seed: u64) -> ScenarioSamples {
    let n = oracle.population().len();
    let rows = (0..n)
        .into_par_iter()
        .filter_map(|user| {
            eligibility(oracle, user, scenario).ok()?;
            let plan = plan_selection(oracle, user, scenario.selection, seed).ok()?;
            let location = if scenario.use_location {
                oracle.user_location(user)
            } else {
                None
            };
            Some(UserRow {
                user,
                counts: oracle.prefix_counts(location, &plan.order),
            })
        })
        .collect();
    ScenarioSamples { scenario, rows }
}

/// Reported audience sizes grouped by N, each group sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMatrix {
    pub oracle: OracleConfig,
    by_n: Vec<Vec<u64>>,
}

impl SampleMatrix {
    pub fn from_samples(samples: &ScenarioSamples, cfg: &OracleConfig) -> Self {
        let mut by_n = vec![Vec::new(); MAX_SKILLS];
        for row in &samples.rows {
            for (i, &c) in row.counts.iter().enumerate().take(MAX_SKILLS) {
                by_n[i].push(cfg.report(c));
            }
        }
        for col in &mut by_n {
            col.sort_unstable();
        }
        Self { oracle: *cfg, by_n }
    }

    /// Sorted samples for N = `n` (1-based).
    pub fn samples(&self, n: usize) -> &[u64] {
        &self.by_n[n - 1]
    }

    /// Vector lengths per N.
    pub fn sample_counts(&self) -> Vec<usize> {
        self.by_n.iter().map(Vec::len).collect()
    }
}

pub fn build_matrix(
    oracle: &Oracle,
    scenario: Scenario,
    cfg: &OracleConfig,
    seed: u64,
) -> SampleMatrix {
    SampleMatrix::from_samples(&collect_samples(oracle, scenario, seed), cfg)
}

/// Linear-interpolation (type 7) quantile of ascending data, `p` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    let (first, last) = (sorted.first()?, sorted.last()?);
    if p <= 0.0 {
        return Some(*first);
    }
    if p >= 1.0 {
        return Some(*last);
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let a = sorted[lo];
    Some(match sorted.get(lo + 1) {
        Some(&b) if frac > 0.0 => a + frac * (b - a),
        _ => a,
    })
}

fn quantile_sorted_u64(sorted: &[u64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let a = sorted[lo] as f64;
    Some(match sorted.get(lo + 1) {
        Some(&b) if frac > 0.0 => a + frac * (b as f64 - a),
        _ => a,
    })
}

/// `values[n - 1]` = AS(q, n); `None` where no member has n skills.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileVector {
    /// Quantile in percent, strictly between 0 and 100.
    pub q: f64,
    pub values: Vec<Option<f64>>,
}

pub fn check_quantile(q: f64) -> Result<()> {
    if q > 0.0 && q < 100.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "quantile must lie strictly between 0 and 100, got {q}"
        )))
    }
}

pub fn quantile_vector(matrix: &SampleMatrix, q: f64) -> Result<QuantileVector> {
    check_quantile(q)?;
    let values = matrix
        .by_n
        .iter()
        .map(|col| quantile_sorted_u64(col, q / 100.0))
        .collect();
    Ok(QuantileVector { q, values })
}

/// Plot data `N,Q,AS`, one row per defined entry.
pub fn write_quantile_csv<W: Write>(vectors: &[QuantileVector], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["N", "Q", "AS"])?;
    for v in vectors {
        for (i, value) in v.values.iter().enumerate() {
            if let Some(value) = value {
                out.write_record([(i + 1).to_string(), v.q.to_string(), value.to_string()])?;
            }
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Deserialize)]
struct QuantileRecord {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "Q")]
    q: f64,
    #[serde(rename = "AS")]
    value: f64,
}

/// Read `N,Q,AS` plot data back into one vector per Q, in first-seen order.
pub fn read_quantile_csv<R: Read>(r: R) -> Result<Vec<QuantileVector>> {
    let mut vectors: Vec<QuantileVector> = Vec::new();
    let mut rd = csv::Reader::from_reader(r);
    for (i, rec) in rd.deserialize::<QuantileRecord>().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.n == 0 || rec.n > MAX_SKILLS {
            return Err(Error::data(format!(
                "row {line}: N = {} outside 1..={MAX_SKILLS}",
                rec.n
            )));
        }
        check_quantile(rec.q)
            .map_err(|_| Error::data(format!("row {line}: Q = {} outside (0, 100)", rec.q)))?;
        if !(rec.value.is_finite() && rec.value > 0.0) {
            return Err(Error::data(format!(
                "row {line}: audience size {} must be positive",
                rec.value
            )));
        }
        let idx = match vectors.iter().position(|v| v.q == rec.q) {
            Some(idx) => idx,
            None => {
                vectors.push(QuantileVector {
                    q: rec.q,
                    values: vec![None; MAX_SKILLS],
                });
                vectors.len() - 1
            }
        };
        vectors[idx].values[rec.n - 1] = Some(rec.value);
    }
    Ok(vectors)
}
