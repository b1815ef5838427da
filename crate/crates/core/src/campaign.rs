//! Simulated ad campaigns under a minimum-audience policy.
//!
//! A campaign targets an [`AudienceSpec`]; every matched member is active on a
//! given day with a fixed probability and then sees one impression. Clicks go
//! to a simulated backend log. The outcome keeps the three independent
//! tallies an experimenter would compare: the platform report, what each
//! member saw, and the backend log.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methodology::{plan_selection, Selection};
use crate::oracle::{AudienceSpec, Oracle, OracleConfig};
use crate::risk::SuccessCurve;
use crate::seed;

/// Skill counts used in the proof-of-concept campaigns.
pub const EXPERIMENT_SKILL_COUNTS: [usize; 5] = [7, 10, 13, 16, 19];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// The platform refuses to launch audiences below the floor.
    Enforced,
    /// Only the dashboard checks the floor; launching anyway works.
    #[serde(rename = "clientside")]
    ClientSideOnly,
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyMode::Enforced => "enforced",
            PolicyMode::ClientSideOnly => "clientside",
        })
    }
}

impl FromStr for PolicyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enforced" => Ok(PolicyMode::Enforced),
            "clientside" | "client-side" => Ok(PolicyMode::ClientSideOnly),
            _ => Err(Error::config(format!(
                "unknown policy {s:?}; expected enforced or clientside"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel {
    /// Probability a member logs in on a given day (one impression if so).
    pub p_daily_active: f64,
    /// Click probability per impression for the designated target.
    pub target_click: f64,
    /// Click probability per impression for everybody else.
    pub bystander_click: f64,
}

impl Default for ActivityModel {
    fn default() -> Self {
        Self {
            p_daily_active: 0.9,
            target_click: 1.0,
            bystander_click: 0.02,
        }
    }
}

impl ActivityModel {
    /// Target and bystanders are active every day.
    pub fn always_active() -> Self {
        Self {
            p_daily_active: 1.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub campaign_id: String,
    pub spec: AudienceSpec,
    /// Member the campaign is meant to reach, if any.
    pub target: Option<String>,
    pub duration_days: u32,
    pub budget: f64,
    pub cost_per_impression: f64,
    pub policy: PolicyMode,
    pub activity: ActivityModel,
    pub seed: u64,
}

impl CampaignConfig {
    pub fn new(spec: AudienceSpec, target: Option<String>, policy: PolicyMode, seed: u64) -> Self {
        Self {
            campaign_id: "c0".into(),
            spec,
            target,
            duration_days: 3,
            budget: 10.0,
            cost_per_impression: 0.05,
            policy,
            activity: ActivityModel::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_days == 0 {
            return Err(Error::config("campaign duration must be at least one day"));
        }
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return Err(Error::config(format!(
                "budget must be non-negative, got {}",
                self.budget
            )));
        }
        if !(self.cost_per_impression.is_finite() && self.cost_per_impression >= 0.0) {
            return Err(Error::config("cost per impression must be non-negative"));
        }
        let a = &self.activity;
        for (name, p) in [
            ("daily activity", a.p_daily_active),
            ("target click", a.target_click),
            ("bystander click", a.bystander_click),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!(
                    "{name} probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub impressions: u64,
    pub clicks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BackendClick {
    /// Seconds since the campaign started.
    pub timestamp: u64,
    pub campaign_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignOutcome {
    pub campaign_id: String,
    pub launched: bool,
    /// Audience size shown in the dashboard.
    pub reported_audience: u64,
    pub platform_report: Tally,
    /// Members who saw at least one impression.
    pub per_user_log: BTreeMap<String, Tally>,
    pub backend_clicks: Vec<BackendClick>,
    pub cost: f64,
    pub nanotarget_success: bool,
}

impl CampaignOutcome {
    fn not_launched(cfg: &CampaignConfig, reported_audience: u64) -> Self {
        Self {
            campaign_id: cfg.campaign_id.clone(),
            launched: false,
            reported_audience,
            platform_report: Tally::default(),
            per_user_log: BTreeMap::new(),
            backend_clicks: Vec::new(),
            cost: 0.0,
            nanotarget_success: false,
        }
    }

    /// What the designated target saw.
    pub fn target_tally(&self, target: &str) -> Tally {
        self.per_user_log.get(target).copied().unwrap_or_default()
    }
}

const DAY: u64 = 86_400;

/// Run one campaign. Under [`PolicyMode::Enforced`] the platform checks the
/// true audience against the floor before launch; the dashboard figure is
/// censored and never shows the shortfall.
pub fn launch(
    oracle: &Oracle,
    cfg: &CampaignConfig,
    oracle_cfg: &OracleConfig,
) -> Result<CampaignOutcome> {
    cfg.validate()?;
    let matched = oracle.matched_indices(&cfg.spec);
    let true_count = matched.len() as u64;
    let reported = oracle_cfg.report(true_count);
    if cfg.policy == PolicyMode::Enforced && true_count < oracle_cfg.floor {
        return Ok(CampaignOutcome::not_launched(cfg, reported));
    }

    let users = oracle.population().users();
    // Per-member streams make delivery independent of iteration order.
    let mut streams: Vec<_> = matched
        .iter()
        .map(|&i| seed::rng(seed::derive(cfg.seed, users[i as usize].id.as_bytes())))
        .collect();

    let mut per_user_log: BTreeMap<String, Tally> = BTreeMap::new();
    let mut backend_clicks = Vec::new();
    let mut platform = Tally::default();
    let mut cost = 0.0;
    let mut spent = 0u64;
    let max_impressions = if cfg.cost_per_impression > 0.0 {
        (cfg.budget / cfg.cost_per_impression + 1e-9).floor() as u64
    } else {
        u64::MAX
    };

    'days: for day in 0..u64::from(cfg.duration_days) {
        for (k, &i) in matched.iter().enumerate() {
            let rng = &mut streams[k];
            let active = rng.gen_bool(cfg.activity.p_daily_active);
            let click_draw: f64 = rng.gen();
            let second: u64 = rng.gen_range(0..DAY);
            if !active {
                continue;
            }
            if spent >= max_impressions {
                break 'days;
            }
            spent += 1;
            let id = &users[i as usize].id;
            let p_click = if cfg.target.as_deref() == Some(id.as_str()) {
                cfg.activity.target_click
            } else {
                cfg.activity.bystander_click
            };
            let entry = per_user_log.entry(id.clone()).or_default();
            entry.impressions += 1;
            platform.impressions += 1;
            cost += cfg.cost_per_impression;
            if click_draw < p_click {
                entry.clicks += 1;
                platform.clicks += 1;
                backend_clicks.push(BackendClick {
                    timestamp: day * DAY + second,
                    campaign_id: cfg.campaign_id.clone(),
                });
            }
        }
    }
    backend_clicks.sort();

    let nanotarget_success = match &cfg.target {
        Some(t) => per_user_log.len() == 1 && per_user_log.contains_key(t),
        None => false,
    };
    Ok(CampaignOutcome {
        campaign_id: cfg.campaign_id.clone(),
        launched: true,
        reported_audience: reported,
        platform_report: platform,
        per_user_log,
        backend_clicks,
        cost,
        nanotarget_success,
    })
}

/// Expected number of successful campaigns: `p * campaigns`.
pub fn expected_successes(p: f64, campaigns: usize) -> f64 {
    p * campaigns as f64
}

/// The target's location plus the first `k` skills of their nested random
/// ordering.
pub fn spec_for_target(
    oracle: &Oracle,
    target: &str,
    k: usize,
    selection_seed: u64,
) -> Result<AudienceSpec> {
    let user = oracle
        .user_index(target)
        .ok_or_else(|| Error::data(format!("no member with id {target:?}")))?;
    let profile = &oracle.population().users()[user];
    if k == 0 || k > profile.skills.len() {
        return Err(Error::config(format!(
            "{target} lists {} skills; cannot target with {k}",
            profile.skills.len()
        )));
    }
    let plan = plan_selection(oracle, user, Selection::Random, selection_seed)
        .map_err(|_| Error::config(format!("{target} lists no skills")))?;
    Ok(AudienceSpec::new(
        profile.location.as_deref(),
        plan.prefix(k).iter().map(|&s| oracle.skill_name(s)),
    ))
}

/// `n` members with a location and at least `min_skills` skills, drawn
/// without replacement and returned in population order.
pub fn pick_targets(
    oracle: &Oracle,
    n: usize,
    min_skills: usize,
    seed: u64,
) -> Result<Vec<String>> {
    use rand::seq::index::sample;
    let users = oracle.population().users();
    let pool: Vec<usize> = (0..users.len())
        .filter(|&i| users[i].location.is_some() && users[i].skills.len() >= min_skills.max(1))
        .collect();
    if pool.len() < n {
        return Err(Error::config(format!(
            "only {} members have a location and {min_skills}+ skills; {n} targets requested",
            pool.len()
        )));
    }
    let mut picked: Vec<usize> = sample(&mut seed::rng(seed), pool.len(), n)
        .into_iter()
        .map(|j| pool[j])
        .collect();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| users[i].id.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub targets: Vec<String>,
    pub skill_counts: Vec<usize>,
    pub selection: Selection,
    pub repetitions: usize,
}

impl ExperimentPlan {
    pub fn new(targets: Vec<String>, skill_counts: Vec<usize>) -> Self {
        Self {
            targets,
            skill_counts,
            selection: Selection::Random,
            repetitions: 1,
        }
    }
}

/// Campaign settings shared by every campaign of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignDefaults {
    pub duration_days: u32,
    pub budget: f64,
    pub cost_per_impression: f64,
    pub activity: ActivityModel,
}

impl Default for CampaignDefaults {
    fn default() -> Self {
        let c = CampaignConfig::new(
            AudienceSpec::everyone(),
            None,
            PolicyMode::ClientSideOnly,
            0,
        );
        Self {
            duration_days: c.duration_days,
            budget: c.budget,
            cost_per_impression: c.cost_per_impression,
            activity: c.activity,
        }
    }
}

/// One campaign as an experimenter would log it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub campaign_id: String,
    pub target: String,
    pub skill_count: usize,
    pub repetition: usize,
    pub true_audience: u64,
    pub platform: Tally,
    pub target_report: Tally,
    pub backend_clicks: usize,
    pub cost: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillCountSummary {
    pub skill_count: usize,
    pub campaigns: usize,
    pub model_probability: Option<f64>,
    pub expected_successes: Option<f64>,
    pub observed_successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub summary: Vec<SkillCountSummary>,
    pub campaigns: Vec<CampaignRecord>,
}

impl ExperimentReport {
    pub fn success_fraction(&self, skill_count: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.skill_count == skill_count && s.campaigns > 0)
            .map(|s| s.observed_successes as f64 / s.campaigns as f64)
    }
}

/// Launch every (target, skill count, repetition) campaign in client-side
/// mode and tally successes per skill count next to the model's expectation.
pub fn run_experiment(
    oracle: &Oracle,
    plan: &ExperimentPlan,
    curve: Option<&SuccessCurve>,
    defaults: &CampaignDefaults,
    oracle_cfg: &OracleConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    if plan.selection != Selection::Random {
        return Err(Error::config("experiments select skills at random"));
    }
    if plan.repetitions == 0 {
        return Err(Error::config("repetitions must be at least 1"));
    }
    let jobs: Vec<(usize, &String, usize)> = plan
        .skill_counts
        .iter()
        .flat_map(|&k| {
            plan.targets
                .iter()
                .flat_map(move |t| (0..plan.repetitions).map(move |r| (k, t, r)))
        })
        .collect();
    let selection_root = seed::derive(seed, b"experiment/selection");
    let campaigns = jobs
        .par_iter()
        .map(|&(k, target, rep)| {
            let spec = spec_for_target(
                oracle,
                target,
                k,
                seed::derive_index(selection_root, rep as u64),
            )?;
            let campaign_id = format!("{target}-n{k}-r{rep}");
            let cfg = CampaignConfig {
                campaign_id: campaign_id.clone(),
                spec,
                target: Some(target.clone()),
                duration_days: defaults.duration_days,
                budget: defaults.budget,
                cost_per_impression: defaults.cost_per_impression,
                policy: PolicyMode::ClientSideOnly,
                activity: defaults.activity,
                seed: seed::derive(seed, format!("campaign/{campaign_id}").as_bytes()),
            };
            let out = launch(oracle, &cfg, oracle_cfg)?;
            Ok(CampaignRecord {
                campaign_id,
                target: target.clone(),
                skill_count: k,
                repetition: rep,
                true_audience: oracle.count(&cfg.spec),
                platform: out.platform_report,
                target_report: out.target_tally(target),
                backend_clicks: out.backend_clicks.len(),
                cost: out.cost,
                success: out.nanotarget_success,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = plan
        .skill_counts
        .iter()
        .map(|&k| {
            let rows = campaigns.iter().filter(|c| c.skill_count == k);
            let n = rows.clone().count();
            let p = curve.map(|c| c.at(k));
            SkillCountSummary {
                skill_count: k,
                campaigns: n,
                model_probability: p,
                expected_successes: p.map(|p| expected_successes(p, n)),
                observed_successes: rows.filter(|c| c.success).count(),
            }
        })
        .collect();
    Ok(ExperimentReport { summary, campaigns })
}
