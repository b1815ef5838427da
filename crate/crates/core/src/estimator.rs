//! Censored log-linear fit of quantile vectors and bootstrap intervals.
//!
//! Each quantile vector is modeled as `ln AS(Q, N) = B - A * N` using only
//! entries strictly above the reporting floor. The number of skills that
//! isolates a member with probability Q/100 is where the line reaches an
//! audience of one: `n_p = B / A`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FitError, Result};
use crate::methodology::{
    check_quantile, collect_samples, quantile_sorted, quantile_vector, QuantileVector,
    SampleMatrix, Scenario, ScenarioSamples,
};
use crate::oracle::{Oracle, OracleConfig};
use crate::population::MAX_SKILLS;
use crate::seed;

pub const FULL_BOOTSTRAP_ITERATIONS: usize = 10_000;
pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 1_000;
pub const DEFAULT_MIN_UNCENSORED_POINTS: usize = 3;
/// Largest tolerated share of failed bootstrap replicates.
pub const MAX_FAILED_SHARE: f64 = 0.20;
pub const TABLE_QUANTILES: [f64; 3] = [50.0, 75.0, 90.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Quantile in percent.
    pub q: f64,
    /// Decay per added skill in natural-log units.
    pub a: f64,
    pub b: f64,
    pub n_p: f64,
    pub r_squared: f64,
    /// 95% percentile-bootstrap interval on `n_p`.
    pub ci: Option<[f64; 2]>,
    /// Smallest N whose quantile value sits at or below the floor.
    pub n_asymp: Option<usize>,
    /// `(N, AS)` pairs that entered the regression.
    pub used_points: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub bootstrap_iterations: usize,
    pub quantiles: Vec<f64>,
    pub min_uncensored_points: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            bootstrap_iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            quantiles: TABLE_QUANTILES.to_vec(),
            min_uncensored_points: DEFAULT_MIN_UNCENSORED_POINTS,
            seed: 42,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bootstrap_iterations == 0 {
            return Err(Error::config("bootstrap iterations must be at least 1"));
        }
        if self.min_uncensored_points < 3 {
            return Err(Error::config(
                "at least 3 uncensored points are required for a fit",
            ));
        }
        if self.quantiles.is_empty() {
            return Err(Error::config("no quantiles requested"));
        }
        self.quantiles.iter().try_for_each(|&q| check_quantile(q))
    }
}

/// Point fit with the default minimum of three uncensored points.
pub fn fit_np(vec: &QuantileVector, floor: u64) -> Result<FitResult, FitError> {
    fit_np_with(vec, floor, DEFAULT_MIN_UNCENSORED_POINTS)
}

pub fn fit_np_with(
    vec: &QuantileVector,
    floor: u64,
    min_points: usize,
) -> Result<FitResult, FitError> {
    let floor = floor as f64;
    let mut used_points = Vec::new();
    let mut n_asymp = None;
    for (i, v) in vec.values.iter().enumerate() {
        let Some(v) = *v else { continue };
        if v > floor {
            used_points.push((i + 1, v));
        } else if n_asymp.is_none() {
            n_asymp = Some(i + 1);
        }
    }
    let min_points = min_points.max(DEFAULT_MIN_UNCENSORED_POINTS);
    if used_points.len() < min_points {
        return Err(FitError::Degenerate {
            uncensored: used_points.len(),
            required: min_points,
        });
    }

    let k = used_points.len() as f64;
    let mean_x = used_points.iter().map(|(n, _)| *n as f64).sum::<f64>() / k;
    let mean_y = used_points.iter().map(|(_, v)| v.ln()).sum::<f64>() / k;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (n, v) in &used_points {
        let dx = *n as f64 - mean_x;
        let dy = v.ln() - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let a = -slope;
    if a.is_nan() || a <= 0.0 {
        return Err(FitError::NonDecaying { slope: a });
    }
    let b = mean_y - slope * mean_x;
    let ss_res: f64 = used_points
        .iter()
        .map(|(n, v)| {
            let r = v.ln() - (b - a * *n as f64);
            r * r
        })
        .sum();
    let r_squared = (1.0 - ss_res / syy).clamp(0.0, 1.0);
    Ok(FitResult {
        q: vec.q,
        a,
        b,
        n_p: b / a,
        r_squared,
        ci: None,
        n_asymp,
        used_points,
    })
}

/// Full-sample columns remembering which member each value came from, so a
/// bootstrap replicate is just a weight per member.
struct Columns {
    by_n: Vec<Vec<(u64, u32)>>,
    row_len: Vec<usize>,
}

impl Columns {
    fn new(samples: &ScenarioSamples, cfg: &OracleConfig) -> Self {
        let mut by_n = vec![Vec::new(); MAX_SKILLS];
        let mut row_len = Vec::with_capacity(samples.rows.len());
        for (r, row) in samples.rows.iter().enumerate() {
            let len = row.counts.len().min(MAX_SKILLS);
            row_len.push(len);
            for (i, &c) in row.counts.iter().take(len).enumerate() {
                by_n[i].push((cfg.report(c), r as u32));
            }
        }
        for col in &mut by_n {
            col.sort_unstable();
        }
        Self { by_n, row_len }
    }

    /// Type-7 quantiles (`ps` in [0, 1]) of every column under member
    /// multiplicities `weights`.
    fn quantile_vectors(&self, weights: &[u32], qs: &[f64]) -> Vec<QuantileVector> {
        let mut hist = [0u64; MAX_SKILLS + 1];
        for (len, w) in self.row_len.iter().zip(weights) {
            hist[*len] += u64::from(*w);
        }
        let mut out: Vec<QuantileVector> = qs
            .iter()
            .map(|&q| QuantileVector {
                q,
                values: vec![None; MAX_SKILLS],
            })
            .collect();
        let mut total: u64 = hist.iter().sum();
        for n in 1..=MAX_SKILLS {
            total -= hist[n - 1];
            if total == 0 {
                break;
            }
            let ps: Vec<f64> = qs.iter().map(|q| q / 100.0).collect();
            let vals = weighted_type7(&self.by_n[n - 1], weights, total, &ps);
            for (v, val) in out.iter_mut().zip(vals) {
                v.values[n - 1] = Some(val);
            }
        }
        out
    }
}

fn weighted_type7(col: &[(u64, u32)], weights: &[u32], m: u64, ps: &[f64]) -> Vec<f64> {
    let mut wanted: Vec<(u64, usize)> = Vec::with_capacity(2 * ps.len());
    let mut fracs = Vec::with_capacity(ps.len());
    for (k, p) in ps.iter().enumerate() {
        let h = (m - 1) as f64 * p;
        let lo = h.floor() as u64;
        fracs.push(h - lo as f64);
        wanted.push((lo, 2 * k));
        wanted.push(((lo + 1).min(m - 1), 2 * k + 1));
    }
    wanted.sort_unstable();
    let mut vals = vec![0.0; wanted.len()];
    let mut next = 0;
    let mut cum = 0u64;
    for &(v, r) in col {
        let w = u64::from(weights[r as usize]);
        if w == 0 {
            continue;
        }
        cum += w;
        while next < wanted.len() && wanted[next].0 < cum {
            vals[wanted[next].1] = v as f64;
            next += 1;
        }
        if next == wanted.len() {
            break;
        }
    }
    fracs
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let (a, b) = (vals[2 * k], vals[2 * k + 1]);
            if *f > 0.0 {
                a + f * (b - a)
            } else {
                a
            }
        })
        .collect()
}

/// Point fits plus bootstrap intervals for every quantile in `cfg`, sharing
/// the same resamples across quantiles. Replicate `i` draws from
/// `derive(cfg.seed, i)`, so the result does not depend on thread count.
pub fn bootstrap_quantiles(
    samples: &ScenarioSamples,
    cfg: &EstimatorConfig,
    oracle_cfg: &OracleConfig,
) -> Result<Vec<Result<FitResult, FitError>>> {
    cfg.validate()?;
    let floor = oracle_cfg.fit_floor();
    let matrix = SampleMatrix::from_samples(samples, oracle_cfg);
    let mut points = Vec::with_capacity(cfg.quantiles.len());
    for &q in &cfg.quantiles {
        points.push(fit_np_with(
            &quantile_vector(&matrix, q)?,
            floor,
            cfg.min_uncensored_points,
        ));
    }
    if points.iter().all(Result::is_err) {
        return Ok(points);
    }

    let columns = Columns::new(samples, oracle_cfg);
    let rows = samples.rows.len();
    let replicates: Vec<Vec<Option<f64>>> = (0..cfg.bootstrap_iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive_index(cfg.seed, i as u64));
            let mut weights = vec![0u32; rows];
            for _ in 0..rows {
                weights[rng.gen_range(0..rows)] += 1;
            }
            columns
                .quantile_vectors(&weights, &cfg.quantiles)
                .iter()
                .map(|v| {
                    fit_np_with(v, floor, cfg.min_uncensored_points)
                        .ok()
                        .map(|f| f.n_p)
                })
                .collect()
        })
        .collect();

    for (k, point) in points.iter_mut().enumerate() {
        let Ok(fit) = point else { continue };
        let mut ok: Vec<f64> = replicates.iter().filter_map(|r| r[k]).collect();
        let failed = replicates.len() - ok.len();
        if failed as f64 > MAX_FAILED_SHARE * replicates.len() as f64 {
            *point = Err(FitError::Unstable {
                failed,
                total: replicates.len(),
            });
            continue;
        }
        ok.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&ok, 0.025).expect("non-empty");
        let hi = quantile_sorted(&ok, 0.975).expect("non-empty");
        fit.ci = Some([lo, hi]);
    }
    Ok(points)
}

/// Bootstrap a single quantile.
pub fn bootstrap_np(
    samples: &ScenarioSamples,
    q: f64,
    cfg: &EstimatorConfig,
    oracle_cfg: &OracleConfig,
) -> Result<FitResult> {
    let single = EstimatorConfig {
        quantiles: vec![q],
        ..cfg.clone()
    };
    let mut out = bootstrap_quantiles(samples, &single, oracle_cfg)?;
    Ok(out.remove(0)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCell {
    pub scenario: Scenario,
    pub q: f64,
    pub result: Result<FitResult, FitError>,
}

/// Fits keyed by (scenario, quantile).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTable {
    pub quantiles: Vec<f64>,
    pub cells: Vec<ScenarioCell>,
}

/// Run every scenario. Selection plans use `seed::selection(cfg.seed)`;
/// bootstrap streams are derived per scenario.
pub fn run_scenarios(
    oracle: &Oracle,
    cfg: &EstimatorConfig,
    oracle_cfg: &OracleConfig,
) -> Result<ScenarioTable> {
    cfg.validate()?;
    let samples: Vec<ScenarioSamples> = Scenario::ALL
        .iter()
        .map(|&s| collect_samples(oracle, s, seed::selection(cfg.seed)))
        .collect();
    run_scenarios_on(&samples, cfg, oracle_cfg)
}

/// [`run_scenarios`] over samples collected beforehand.
pub fn run_scenarios_on(
    samples: &[ScenarioSamples],
    cfg: &EstimatorConfig,
    oracle_cfg: &OracleConfig,
) -> Result<ScenarioTable> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for s in samples {
        let scenario = s.scenario;
        let boot = EstimatorConfig {
            seed: seed::derive(cfg.seed, format!("bootstrap/{scenario}").as_bytes()),
            ..cfg.clone()
        };
        let fits = bootstrap_quantiles(s, &boot, oracle_cfg)?;
        for (&q, result) in cfg.quantiles.iter().zip(fits) {
            cells.push(ScenarioCell {
                scenario,
                q,
                result,
            });
        }
    }
    Ok(ScenarioTable {
        quantiles: cfg.quantiles.clone(),
        cells,
    })
}

impl FitError {
    pub fn code(&self) -> &'static str {
        match self {
            FitError::Degenerate { .. } => "degenerate",
            FitError::NonDecaying { .. } => "non-decaying",
            FitError::Unstable { .. } => "unstable",
        }
    }
}

/// One JSON report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: Option<Scenario>,
    #[serde(rename = "Q")]
    pub q: f64,
    pub n_p: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub r2: Option<f64>,
    pub n_asymp: Option<usize>,
    pub points_used: usize,
    #[serde(rename = "A")]
    pub a: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<f64>,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn new(scenario: Option<Scenario>, q: f64, result: &Result<FitResult, FitError>) -> Self {
        match result {
            Ok(f) => Self {
                scenario,
                q,
                n_p: Some(f.n_p),
                ci: f.ci,
                r2: Some(f.r_squared),
                n_asymp: f.n_asymp,
                points_used: f.used_points.len(),
                a: Some(f.a),
                b: Some(f.b),
                error: None,
            },
            Err(e) => Self {
                scenario,
                q,
                n_p: None,
                ci: None,
                r2: None,
                n_asymp: None,
                points_used: 0,
                a: None,
                b: None,
                error: Some(e.to_string()),
            },
        }
    }
}

impl ScenarioTable {
    pub fn get(&self, scenario: Scenario, q: f64) -> Option<&Result<FitResult, FitError>> {
        self.cells
            .iter()
            .find(|c| c.scenario == scenario && c.q == q)
            .map(|c| &c.result)
    }

    pub fn report_rows(&self) -> Vec<ReportRow> {
        self.cells
            .iter()
            .map(|c| ReportRow::new(Some(c.scenario), c.q, &c.result))
            .collect()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.report_rows())?;
        Ok(())
    }

    /// One row per scenario with `P`, `95% CI` and `R2` columns per quantile.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["scenario".to_string()];
        for q in &self.quantiles {
            header.push(format!("P={}", q / 100.0));
            header.push("95% CI".into());
            header.push("R2".into());
        }
        out.write_record(&header)?;
        for scenario in Scenario::ALL {
            let mut rec = vec![scenario.label().to_string()];
            for &q in &self.quantiles {
                match self.get(scenario, q) {
                    Some(Ok(f)) => {
                        rec.push(format!("{:.1}", f.n_p));
                        rec.push(
                            f.ci.map_or_else(String::new, |[lo, hi]| format!("({lo:.2},{hi:.2})")),
                        );
                        rec.push(format!("{:.2}", f.r_squared));
                    }
                    Some(Err(e)) => {
                        rec.push(e.code().to_string());
                        rec.push(String::new());
                        rec.push(String::new());
                    }
                    None => rec.extend([String::new(), String::new(), String::new()]),
                }
            }
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methodology::UserRow;

    fn planted(a: f64, b: f64, floor: f64) -> QuantileVector {
        QuantileVector {
            q: 50.0,
            values: (1..=MAX_SKILLS)
                .map(|n| Some((b - a * n as f64).exp().max(floor)))
                .collect(),
        }
    }

    #[test]
    fn noiseless_line_is_recovered() {
        let f = fit_np(&planted(0.3, 6.0, 0.0), 0).unwrap();
        assert!((f.a - 0.3).abs() < 1e-9);
        assert!((f.b - 6.0).abs() < 1e-9);
        assert!((f.n_p - 20.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-9);
        assert_eq!(f.n_asymp, None);
    }

    #[test]
    fn cutpoint_is_b_over_a() {
        let f = fit_np(&planted(0.5, 5.0, 0.0), 0).unwrap();
        assert!((f.n_p - 10.0).abs() < 1e-9);
    }

    #[test]
    fn censored_tail_is_ignored() {
        let floor = 300.0;
        let censored = planted(0.3, 6.0 + 300f64.ln(), floor);
        let with = fit_np(&censored, 300).unwrap();
        let uncensored = QuantileVector {
            q: 50.0,
            values: censored
                .values
                .iter()
                .map(|v| v.filter(|v| *v > floor))
                .collect(),
        };
        let without = fit_np(&uncensored, 0).unwrap();
        assert_eq!(with.a, without.a);
        assert_eq!(with.b, without.b);
        assert_eq!(with.used_points, without.used_points);
        assert_eq!(with.n_asymp, Some(20));
    }

    #[test]
    fn too_few_points_and_flat_lines_fail() {
        let mut v = planted(0.3, 6.0, 0.0);
        for x in v.values.iter_mut().skip(2) {
            *x = None;
        }
        assert!(matches!(
            fit_np(&v, 0),
            Err(FitError::Degenerate { uncensored: 2, .. })
        ));
        let flat = QuantileVector {
            q: 50.0,
            values: vec![Some(500.0); MAX_SKILLS],
        };
        assert!(matches!(
            fit_np(&flat, 300),
            Err(FitError::NonDecaying { .. })
        ));
        let rising = QuantileVector {
            q: 50.0,
            values: (1..=5).map(|n| Some(n as f64 * 100.0)).collect(),
        };
        assert!(matches!(
            fit_np(&rising, 0),
            Err(FitError::NonDecaying { .. })
        ));
    }

    #[test]
    fn weighted_quantiles_with_unit_weights_match_type7() {
        let rows: Vec<UserRow> = (0..37)
            .map(|i| UserRow {
                user: i,
                counts: (0..(1 + i % 7))
                    .map(|n| ((i * 31 + n * 17) % 101 + 1) as u64)
                    .collect(),
            })
            .collect();
        let samples = ScenarioSamples::from_rows(Scenario::SK_R, rows);
        let cfg = OracleConfig::censored(20);
        let matrix = SampleMatrix::from_samples(&samples, &cfg);
        let columns = Columns::new(&samples, &cfg);
        let qs = [10.0, 50.0, 75.0, 90.0];
        let weighted = columns.quantile_vectors(&vec![1; samples.rows.len()], &qs);
        for (w, q) in weighted.iter().zip(qs) {
            assert_eq!(*w, quantile_vector(&matrix, q).unwrap());
        }
    }

    #[test]
    fn identical_members_give_zero_width_interval() {
        let row: Vec<u64> = (1..=30)
            .map(|n| (8.0 - 0.25 * n as f64).exp().round() as u64)
            .collect();
        let rows = (0..50)
            .map(|user| UserRow {
                user,
                counts: row.clone(),
            })
            .collect();
        let samples = ScenarioSamples::from_rows(Scenario::LO_R, rows);
        let cfg = EstimatorConfig {
            bootstrap_iterations: 50,
            ..EstimatorConfig::default()
        };
        let fit = bootstrap_np(&samples, 75.0, &cfg, &OracleConfig::censored(30)).unwrap();
        let [lo, hi] = fit.ci.unwrap();
        assert_eq!(lo, hi);
        assert_eq!(lo, fit.n_p);
    }
}
