//! Audience-size queries with AND semantics and a reporting floor.
//!
//! [`Oracle`] builds an inverted index (skill -> members, location -> members)
//! over a [`Population`] and answers queries by scanning the shortest posting
//! list and checking every other constraint per candidate.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::population::Population;

/// Default minimum audience an ads manager reports.
pub const DEFAULT_FLOOR: u64 = 300;

/// A targeting predicate: optional location AND every listed skill.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudienceSpec {
    pub location: Option<String>,
    pub skills: BTreeSet<String>,
}

impl AudienceSpec {
    pub fn new<I, S>(location: Option<&str>, skills: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            location: location.map(str::to_string),
            skills: skills.into_iter().map(Into::into).collect(),
        }
    }

    /// The vacuous predicate matching every member.
    pub fn everyone() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.location.is_none() && self.skills.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub floor: u64,
    /// Reporting mode when true, ground truth when false.
    pub censored: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            floor: DEFAULT_FLOOR,
            censored: true,
        }
    }
}

impl OracleConfig {
    pub fn censored(floor: u64) -> Self {
        Self {
            floor,
            censored: true,
        }
    }

    pub fn exact() -> Self {
        Self {
            floor: DEFAULT_FLOOR,
            censored: false,
        }
    }

    /// Threshold at or below which a reported value carries no information.
    pub fn fit_floor(&self) -> u64 {
        if self.censored {
            self.floor
        } else {
            0
        }
    }

    /// Apply the reporting floor to a true count.
    pub fn report(&self, count: u64) -> u64 {
        if self.censored && count < self.floor {
            self.floor
        } else {
            count
        }
    }
}

#[derive(Clone, Copy)]
enum Constraint {
    Location(u32),
    Skill(u32),
}

/// Inverted index over a population. Read-only once built, so it can be
/// shared across threads.
#[derive(Debug)]
pub struct Oracle<'a> {
    pop: &'a Population,
    skill_ids: HashMap<&'a str, u32>,
    location_ids: HashMap<&'a str, u32>,
    skill_names: Vec<&'a str>,
    /// Per member, skill ids sorted ascending.
    user_skills: Vec<Vec<u32>>,
    /// Per member, skill ids in listing order.
    user_skill_order: Vec<Vec<u32>>,
    user_location: Vec<Option<u32>>,
    skill_postings: Vec<Vec<u32>>,
    location_postings: Vec<Vec<u32>>,
    /// Membership bitsets for skills and locations held by at least 1/64
    /// of members.
    skill_bits: Vec<Option<Vec<u64>>>,
    location_bits: Vec<Option<Vec<u64>>>,
}

impl<'a> Oracle<'a> {
    pub fn new(pop: &'a Population) -> Self {
        let mut skill_ids = HashMap::with_capacity(pop.skill_catalog().len());
        let mut skill_names = Vec::with_capacity(pop.skill_catalog().len());
        for c in pop.skill_catalog() {
            skill_ids.entry(c.name.as_str()).or_insert_with(|| {
                skill_names.push(c.name.as_str());
                (skill_names.len() - 1) as u32
            });
        }
        let mut location_ids = HashMap::with_capacity(pop.location_catalog().len());
        for c in pop.location_catalog() {
            let next = location_ids.len() as u32;
            location_ids.entry(c.name.as_str()).or_insert(next);
        }

        let mut skill_postings = vec![Vec::new(); skill_names.len()];
        let mut location_postings = vec![Vec::new(); location_ids.len()];
        let mut user_skills = Vec::with_capacity(pop.len());
        let mut user_skill_order = Vec::with_capacity(pop.len());
        let mut user_location = Vec::with_capacity(pop.len());
        for (i, u) in pop.users().iter().enumerate() {
            let i = i as u32;
            let order: Vec<u32> = u.skills.iter().map(|s| skill_ids[s.as_str()]).collect();
            for &s in &order {
                skill_postings[s as usize].push(i);
            }
            let mut sorted = order.clone();
            sorted.sort_unstable();
            user_skills.push(sorted);
            user_skill_order.push(order);
            let loc = u.location.as_deref().map(|l| location_ids[l]);
            if let Some(l) = loc {
                location_postings[l as usize].push(i);
            }
            user_location.push(loc);
        }
        let words = pop.len().div_ceil(64);
        let dense = (pop.len() / 64).max(1);
        let to_bits = |postings: &[Vec<u32>]| -> Vec<Option<Vec<u64>>> {
            postings
                .iter()
                .map(|p| {
                    (p.len() >= dense).then(|| {
                        let mut bits = vec![0u64; words];
                        for &u in p {
                            bits[u as usize >> 6] |= 1 << (u & 63);
                        }
                        bits
                    })
                })
                .collect()
        };
        let skill_bits = to_bits(&skill_postings);
        let location_bits = to_bits(&location_postings);
        Self {
            pop,
            skill_ids,
            location_ids,
            skill_names,
            user_skills,
            user_skill_order,
            user_location,
            skill_postings,
            location_postings,
            skill_bits,
            location_bits,
        }
    }

    pub fn population(&self) -> &'a Population {
        self.pop
    }

    pub fn skill_id(&self, name: &str) -> Option<u32> {
        self.skill_ids.get(name).copied()
    }

    pub fn location_id(&self, name: &str) -> Option<u32> {
        self.location_ids.get(name).copied()
    }

    pub fn skill_name(&self, id: u32) -> &'a str {
        self.skill_names[id as usize]
    }

    /// Skill ids of a member in the order the profile lists them.
    pub fn user_skill_ids(&self, user: usize) -> &[u32] {
        &self.user_skill_order[user]
    }

    pub fn user_location(&self, user: usize) -> Option<u32> {
        self.user_location[user]
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.pop.users().iter().position(|u| u.id == id)
    }

    /// Ground-truth worldwide audience of a single skill.
    pub fn skill_audience(&self, skill: u32) -> u64 {
        self.skill_postings[skill as usize].len() as u64
    }

    pub fn location_audience(&self, location: u32) -> u64 {
        self.location_postings[location as usize].len() as u64
    }

    fn has_skill(&self, user: u32, skill: u32) -> bool {
        match &self.skill_bits[skill as usize] {
            Some(bits) => bits[user as usize >> 6] & (1 << (user & 63)) != 0,
            None => self.user_skills[user as usize]
                .binary_search(&skill)
                .is_ok(),
        }
    }

    fn satisfies(&self, user: u32, c: Constraint) -> bool {
        match c {
            Constraint::Location(l) => self.user_location[user as usize] == Some(l),
            Constraint::Skill(s) => self.has_skill(user, s),
        }
    }

    fn bits(&self, c: Constraint) -> Option<&[u64]> {
        match c {
            Constraint::Location(l) => self.location_bits[l as usize].as_deref(),
            Constraint::Skill(s) => self.skill_bits[s as usize].as_deref(),
        }
    }

    fn postings(&self, c: Constraint) -> &[u32] {
        match c {
            Constraint::Location(l) => &self.location_postings[l as usize],
            Constraint::Skill(s) => &self.skill_postings[s as usize],
        }
    }

    /// Members satisfying every constraint, ascending. `None` for the
    /// vacuous predicate.
    fn intersect(&self, constraints: &[Constraint]) -> Option<Vec<u32>> {
        self.intersect_capped(constraints, usize::MAX)
    }

    /// Like [`Self::intersect`] but stops after `cap` matches.
    fn intersect_capped(&self, constraints: &[Constraint], cap: usize) -> Option<Vec<u32>> {
        let (pivot, shortest) = constraints
            .iter()
            .enumerate()
            .min_by_key(|(_, c)| self.postings(**c).len())?;
        let rest: Vec<Constraint> = constraints
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != pivot)
            .map(|(_, c)| *c)
            .collect();
        Some(
            self.postings(*shortest)
                .iter()
                .copied()
                .filter(|&u| rest.iter().all(|&c| self.satisfies(u, c)))
                .take(cap)
                .collect(),
        )
    }

    fn resolve(&self, spec: &AudienceSpec) -> Option<Vec<Constraint>> {
        let mut out = Vec::with_capacity(spec.skills.len() + 1);
        if let Some(l) = &spec.location {
            out.push(Constraint::Location(self.location_id(l)?));
        }
        for s in &spec.skills {
            out.push(Constraint::Skill(self.skill_id(s)?));
        }
        Some(out)
    }

    /// Indices of matching members, ascending.
    pub fn matched_indices(&self, spec: &AudienceSpec) -> Vec<u32> {
        match self.resolve(spec) {
            // Unknown labels match nobody.
            None => Vec::new(),
            Some(cs) => self
                .intersect(&cs)
                .unwrap_or_else(|| (0..self.pop.len() as u32).collect()),
        }
    }

    pub fn matched_users(&self, spec: &AudienceSpec) -> BTreeSet<String> {
        self.matched_indices(spec)
            .into_iter()
            .map(|i| self.pop.users()[i as usize].id.clone())
            .collect()
    }

    /// True number of members matching `spec`.
    pub fn count(&self, spec: &AudienceSpec) -> u64 {
        match self.resolve(spec) {
            None => 0,
            Some(cs) => self.count_constraints(&cs),
        }
    }

    fn count_constraints(&self, cs: &[Constraint]) -> u64 {
        match cs {
            [] => self.pop.len() as u64,
            [c] => self.postings(*c).len() as u64,
            _ => self.intersect(cs).map_or(0, |v| v.len() as u64),
        }
    }

    /// True count for an id-level predicate.
    pub fn count_ids(&self, location: Option<u32>, skills: &[u32]) -> u64 {
        let cs: Vec<Constraint> = location
            .map(Constraint::Location)
            .into_iter()
            .chain(skills.iter().map(|&s| Constraint::Skill(s)))
            .collect();
        self.count_constraints(&cs)
    }

    /// `min(count, cap)` for an id-level predicate; stops scanning at `cap`.
    pub fn count_ids_capped(&self, location: Option<u32>, skills: &[u32], cap: u64) -> u64 {
        let cs: Vec<Constraint> = location
            .map(Constraint::Location)
            .into_iter()
            .chain(skills.iter().map(|&s| Constraint::Skill(s)))
            .collect();
        match cs.as_slice() {
            [] => (self.pop.len() as u64).min(cap),
            [c] => (self.postings(*c).len() as u64).min(cap),
            _ => self
                .intersect_capped(&cs, usize::try_from(cap).unwrap_or(usize::MAX))
                .map_or(0, |v| v.len() as u64),
        }
    }

    /// Audience size as the ads manager would report it under `cfg`.
    pub fn audience_size(&self, spec: &AudienceSpec, cfg: &OracleConfig) -> u64 {
        cfg.report(self.count(spec))
    }

    /// True counts for every prefix of `skills` (lengths 1..=len), each
    /// combined with `location` when given. The candidate set is narrowed
    /// incrementally, as a bitset while it is dense and as a list after.
    pub fn prefix_counts(&self, location: Option<u32>, skills: &[u32]) -> Vec<u64> {
        let chain = location
            .map(Constraint::Location)
            .into_iter()
            .chain(skills.iter().map(|&s| Constraint::Skill(s)));
        let mut out = Vec::with_capacity(skills.len());
        let mut cand: Option<Candidates> = None;
        for c in chain {
            let next = match cand.take() {
                None => match self.bits(c) {
                    Some(b) => Candidates::Bits(b.to_vec(), self.postings(c).len()),
                    None => Candidates::List(self.postings(c).to_vec()),
                },
                Some(Candidates::Bits(mut words, _)) => match self.bits(c) {
                    Some(b) => {
                        let mut n = 0;
                        for (w, x) in words.iter_mut().zip(b) {
                            *w &= x;
                            n += w.count_ones() as usize;
                        }
                        Candidates::Bits(words, n)
                    }
                    None => Candidates::List(
                        self.postings(c)
                            .iter()
                            .copied()
                            .filter(|&u| words[u as usize >> 6] & (1 << (u & 63)) != 0)
                            .collect(),
                    ),
                },
                Some(Candidates::List(mut v)) => {
                    v.retain(|&u| self.satisfies(u, c));
                    Candidates::List(v)
                }
            };
            cand = Some(next.shrink());
            if matches!(c, Constraint::Skill(_)) {
                out.push(cand.as_ref().map_or(0, Candidates::len) as u64);
            }
        }
        out
    }
}

enum Candidates {
    /// Bitset over member indices and its population count.
    Bits(Vec<u64>, usize),
    List(Vec<u32>),
}

impl Candidates {
    fn len(&self) -> usize {
        match self {
            Candidates::Bits(_, n) => *n,
            Candidates::List(v) => v.len(),
        }
    }

    /// Switch to a list once scanning the bitset costs more than the members.
    fn shrink(self) -> Self {
        match self {
            Candidates::Bits(words, n) if n * 8 < words.len() => {
                let mut v = Vec::with_capacity(n);
                for (i, &w) in words.iter().enumerate() {
                    let mut w = w;
                    while w != 0 {
                        v.push((i as u32) << 6 | w.trailing_zeros());
                        w &= w - 1;
                    }
                }
                Candidates::List(v)
            }
            other => other,
        }
    }
}

/// One-shot audience size; builds an index per call.
pub fn audience_size(pop: &Population, spec: &AudienceSpec, cfg: &OracleConfig) -> u64 {
    Oracle::new(pop).audience_size(spec, cfg)
}

/// One-shot exact matching set; builds an index per call.
pub fn matched_users(pop: &Population, spec: &AudienceSpec) -> BTreeSet<String> {
    Oracle::new(pop).matched_users(spec)
}
