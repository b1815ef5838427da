//! Success probability of a nanotargeting campaign, affected-population
//! estimates and per-member risk.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FitError, Result};
use crate::estimator::{fit_np_with, DEFAULT_MIN_UNCENSORED_POINTS};
use crate::methodology::{eligibility, plan_selection, quantile_vector, SampleMatrix, Scenario};
use crate::oracle::Oracle;
use crate::population::MAX_SKILLS;

/// Quantile grid (percent) used to trace the success curve.
pub const CURVE_GRID: std::ops::RangeInclusive<u32> = 1..=99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub p_success: f64,
    /// N fell outside the range of fitted cutpoints and was clamped.
    pub extrapolated: bool,
}

/// P(campaign with location + N skills reaches exactly one member), for
/// N = 1..=50, non-decreasing in N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    pub scenario: Scenario,
    pub points: Vec<CurvePoint>,
    /// `(Q, n_p)` for every grid quantile whose fit succeeded.
    pub cutpoints: Vec<(f64, f64)>,
    pub failed_fits: usize,
}

impl SuccessCurve {
    /// Success probability at `n` skills, clamped to 1..=50.
    pub fn at(&self, n: usize) -> f64 {
        self.points[n.clamp(1, MAX_SKILLS) - 1].p_success
    }

    /// Plot data `N,p_success,extrapolated`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["N", "p_success", "extrapolated"])?;
        for p in &self.points {
            out.write_record([
                p.n.to_string(),
                format!("{:.6}", p.p_success),
                p.extrapolated.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Pool-adjacent-violators fit of a non-decreasing sequence (unit weights).
pub fn isotonic_increasing(ys: &[f64]) -> Vec<f64> {
    // (mean, weight) blocks
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(ys.len());
    for &y in ys {
        blocks.push((y, 1));
        while blocks.len() > 1 {
            let (m2, w2) = blocks[blocks.len() - 1];
            let (m1, w1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 as f64 + m2 * w2 as f64) / w as f64, w);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, w)| std::iter::repeat_n(m, w))
        .collect()
}

/// Invert the cutpoints `n_p(Q)` over the grid 1..=99: for every N find the
/// probability P with `n_p(P) = N` by linear interpolation, clamp outside the
/// fitted range, then enforce monotonicity with isotonic regression.
pub fn success_curve(matrix: &SampleMatrix, scenario: Scenario) -> Result<SuccessCurve> {
    let floor = matrix.oracle.fit_floor();
    let mut cutpoints = Vec::new();
    let mut failed_fits = 0;
    let total = CURVE_GRID.count();
    for q in CURVE_GRID {
        let q = f64::from(q);
        match fit_np_with(
            &quantile_vector(matrix, q)?,
            floor,
            DEFAULT_MIN_UNCENSORED_POINTS,
        ) {
            Ok(f) => cutpoints.push((q, f.n_p)),
            Err(_) => failed_fits += 1,
        }
    }
    if 2 * failed_fits > total {
        return Err(FitError::Unstable {
            failed: failed_fits,
            total,
        }
        .into());
    }

    let mut by_np: Vec<(f64, f64)> = cutpoints.iter().map(|&(q, np)| (np, q / 100.0)).collect();
    by_np.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (first, last) = (by_np[0], by_np[by_np.len() - 1]);

    let mut raw = Vec::with_capacity(MAX_SKILLS);
    let mut flags = Vec::with_capacity(MAX_SKILLS);
    for n in 1..=MAX_SKILLS {
        let x = n as f64;
        let (p, extrapolated) = if x < first.0 {
            (first.1, true)
        } else if x > last.0 {
            (last.1, true)
        } else {
            let j = by_np.partition_point(|&(np, _)| np < x);
            let p = if j == 0 {
                by_np[0].1
            } else {
                let (x0, p0) = by_np[j - 1];
                let (x1, p1) = by_np[j];
                if x1 > x0 {
                    p0 + (p1 - p0) * (x - x0) / (x1 - x0)
                } else {
                    p1
                }
            };
            (p, false)
        };
        raw.push(p);
        flags.push(extrapolated);
    }
    let smooth = isotonic_increasing(&raw);
    let points = smooth
        .into_iter()
        .zip(flags)
        .enumerate()
        .map(|(i, (p, extrapolated))| CurvePoint {
            n: i + 1,
            p_success: p.clamp(0.0, 1.0),
            extrapolated,
        })
        .collect();
    Ok(SuccessCurve {
        scenario,
        points,
        cutpoints,
        failed_fits,
    })
}

/// Share of eligible members (N or more skills, plus a location in the
/// location scenarios) whose location + first N planned skills match exactly
/// one member. Every member is queried directly against the index; nothing
/// from the fitted model is used. `None` when nobody is eligible.
pub fn uniqueness_ground_truth(
    oracle: &Oracle,
    scenario: Scenario,
    n: usize,
    selection_seed: u64,
) -> Option<GroundTruth> {
    let mut eligible = 0usize;
    let mut unique = 0usize;
    for user in 0..oracle.population().len() {
        if eligibility(oracle, user, scenario).is_err() || oracle.user_skill_ids(user).len() < n {
            continue;
        }
        let Ok(plan) = plan_selection(oracle, user, scenario.selection, selection_seed) else {
            continue;
        };
        let location = if scenario.use_location {
            oracle.user_location(user)
        } else {
            None
        };
        eligible += 1;
        if oracle.count_ids_capped(location, plan.prefix(n), 2) == 1 {
            unique += 1;
        }
    }
    (eligible > 0).then(|| GroundTruth {
        n,
        eligible,
        unique,
        probability: unique as f64 / eligible as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub n: usize,
    pub eligible: usize,
    pub unique: usize,
    pub probability: f64,
}

/// Members exposed to nanotargeting: `p * frac * base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectedEstimate {
    pub p_uniqueness: f64,
    pub n_required: usize,
    pub frac_with_n_or_more: f64,
    pub base: u64,
    pub affected_count: f64,
    /// `affected_count / base`.
    pub affected_fraction: f64,
}

impl AffectedEstimate {
    pub fn affected_millions(&self) -> f64 {
        self.affected_count / 1e6
    }

    pub fn affected_pct(&self) -> f64 {
        100.0 * self.affected_fraction
    }
}

pub fn estimate_affected(
    p: f64,
    n_required: usize,
    frac: f64,
    base: u64,
) -> Result<AffectedEstimate> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&frac) {
        return Err(Error::config(format!(
            "probability {p} and fraction {frac} must lie in [0, 1]"
        )));
    }
    let affected_count = p * frac * base as f64;
    Ok(AffectedEstimate {
        p_uniqueness: p,
        n_required,
        frac_with_n_or_more: frac,
        base,
        affected_count,
        affected_fraction: if base == 0 {
            0.0
        } else {
            affected_count / base as f64
        },
    })
}

/// Table of affected estimates: `p,n_required,frac,affected_millions,affected_pct`.
pub fn write_affected_csv<W: Write>(rows: &[AffectedEstimate], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "p_uniqueness",
        "n_required",
        "frac_with_n_or_more",
        "affected_millions",
        "affected_pct",
    ])?;
    for r in rows {
        out.write_record([
            r.p_uniqueness.to_string(),
            r.n_required.to_string(),
            format!("{:.4}", r.frac_with_n_or_more),
            format!("{:.2}", r.affected_millions()),
            format!("{:.1}", r.affected_pct()),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Drive [`estimate_affected`] from fitted cutpoints: `n_required` is the
/// ceiling of `n_p` at quantile `100 p`, and the fraction is the share of
/// members with skills that list at least that many.
pub fn affected_from_fit(
    matrix: &SampleMatrix,
    users_with_at_least: &[usize],
    n_with_skills: usize,
    p: f64,
    base: u64,
) -> Result<AffectedEstimate> {
    let fit = fit_np_with(
        &quantile_vector(matrix, 100.0 * p)?,
        matrix.oracle.fit_floor(),
        DEFAULT_MIN_UNCENSORED_POINTS,
    )?;
    let n_required = (fit.n_p.ceil().max(1.0) as usize).min(MAX_SKILLS);
    let frac = if n_with_skills == 0 {
        0.0
    } else {
        users_with_at_least[n_required - 1] as f64 / n_with_skills as f64
    };
    estimate_affected(p, n_required, frac, base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskFlag {
    /// The member lists no skills; no skill-based audience can isolate them.
    NotTargetable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserRisk {
    pub skills: usize,
    pub probability: f64,
    pub flag: Option<RiskFlag>,
}

/// Risk for one member: the curve at their skill count (clamped to 50).
pub fn user_risk(oracle: &Oracle, user_id: &str, curve: &SuccessCurve) -> Result<UserRisk> {
    let user = oracle
        .population()
        .user(user_id)
        .ok_or_else(|| Error::data(format!("no member with id {user_id:?}")))?;
    let skills = user.skills.len();
    if skills == 0 {
        return Ok(UserRisk {
            skills,
            probability: 0.0,
            flag: Some(RiskFlag::NotTargetable),
        });
    }
    Ok(UserRisk {
        skills,
        probability: curve.at(skills.min(MAX_SKILLS)),
        flag: None,
    })
}

/// Fraction of members with skills that list at least `n`.
pub fn frac_with_at_least(oracle: &Oracle, n: usize) -> f64 {
    let users = oracle.population().users();
    let with = users.iter().filter(|u| u.has_skills()).count();
    if with == 0 {
        return 0.0;
    }
    users.iter().filter(|u| u.skills.len() >= n).count() as f64 / with as f64
}
