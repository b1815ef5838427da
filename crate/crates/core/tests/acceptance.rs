//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use uniq_audit::campaign::{
    expected_successes, launch, pick_targets, run_experiment, spec_for_target, ActivityModel,
    CampaignConfig, CampaignDefaults, ExperimentPlan, PolicyMode,
};
use uniq_audit::estimator::fit_np;
use uniq_audit::methodology::{
    build_matrix, quantile_vector, QuantileVector, SampleMatrix, Scenario,
};
use uniq_audit::oracle::{AudienceSpec, Oracle, OracleConfig};
use uniq_audit::population::{generate, GeneratorConfig, Population};
use uniq_audit::risk::{estimate_affected, success_curve, uniqueness_ground_truth, SuccessCurve};
use uniq_audit::seed;

const FLOOR: u64 = 30;
const SEED: u64 = 42;

type Outcome = Result<String, String>;

struct Harness {
    failed: usize,
}

impl Harness {
    fn check(&mut self, id: u32, name: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                self.failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "[{tag}] {id}. {name}: {detail} ({:.1}s)",
            t.elapsed().as_secs_f64()
        );
    }
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn affected_arithmetic() -> Outcome {
    let rows = [
        (0.7, 11, 0.59, 400.61, 41.3),
        (0.75, 13, 0.56, 407.4, 42.0),
        (0.8, 14, 0.54, 419.04, 43.2),
        (0.85, 17, 0.47, 387.52, 40.0),
        (0.9, 21, 0.37, 323.01, 33.3),
        (0.95, 26, 0.28, 258.02, 26.5),
    ];
    let mut worst_m: f64 = 0.0;
    let mut worst_pp: f64 = 0.0;
    for (p, n, frac, millions, pct) in rows {
        let e = estimate_affected(p, n, frac, 970_000_000).map_err(|e| e.to_string())?;
        worst_m = worst_m.max((e.affected_millions() - millions).abs());
        worst_pp = worst_pp.max((e.affected_pct() - pct).abs());
    }
    // 1e-9 absorbs binary rounding of a difference that is exactly 0.1pp.
    ensure(
        worst_m <= 0.01 && worst_pp <= 0.1 + 1e-9,
        format!("6 rows, max |dM| = {worst_m:.4}M, max |dpp| = {worst_pp:.4}"),
    )
}

fn expected_successes_check() -> Outcome {
    let rows = [
        (0.49, 1.47),
        (0.66, 1.98),
        (0.77, 2.31),
        (0.84, 2.52),
        (0.89, 2.67),
    ];
    let mut shown = Vec::new();
    for (p, e) in rows {
        let got = expected_successes(p, 3);
        if format!("{got:.2}") != format!("{e:.2}") || (got - e).abs() > 1e-9 {
            return Err(format!("p = {p}: {got} vs {e}"));
        }
        shown.push(format!("{got:.2}"));
    }
    Ok(shown.join("/"))
}

fn fit_recovery() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/noiseless_line.csv");
    let vectors = uniq_audit::methodology::read_quantile_csv(
        fs::File::open(&path).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let v = &vectors[0];
    let fit = fit_np(v, FLOOR).map_err(|e| e.to_string())?;
    let uncensored = QuantileVector {
        q: v.q,
        values: v
            .values
            .iter()
            .map(|x| x.filter(|&x| x > FLOOR as f64))
            .collect(),
    };
    let restricted = fit_np(&uncensored, FLOOR).map_err(|e| e.to_string())?;
    let same = fit.a == restricted.a
        && fit.b == restricted.b
        && fit.r_squared == restricted.r_squared
        && fit.n_p == restricted.n_p
        && fit.used_points == restricted.used_points;
    let ok = (fit.a - 0.3).abs() <= 1e-9
        && (fit.b - 6.0).abs() <= 1e-9
        && (fit.r_squared - 1.0).abs() <= 1e-9
        && (fit.n_p - 20.0).abs() <= 1e-9
        && same;
    ensure(
        ok,
        format!(
            "A = {:.12}, B = {:.12}, R2 = {:.12}, n_p = {:.9}, {} points used, identical without censored points: {}",
            fit.a,
            fit.b,
            fit.r_squared,
            fit.n_p,
            fit.used_points.len(),
            same
        ),
    )
}

struct Calibrated {
    pop: Population,
}

fn curve_vs_truth(oracle: &Oracle, matrices: &BTreeMap<&str, SampleMatrix>) -> Outcome {
    let sel = seed::selection(SEED);
    let mut details = Vec::new();
    let mut ok = true;
    for scenario in [Scenario::LO_R, Scenario::LO_LP] {
        let curve = match success_curve(&matrices[scenario.key()], scenario) {
            Ok(c) => c,
            Err(e) => {
                ok = false;
                let truth: Vec<String> = [1, 5, 10, 13]
                    .iter()
                    .filter_map(|&n| uniqueness_ground_truth(oracle, scenario, n, sel))
                    .map(|g| format!("N={}:{:.2}", g.n, g.probability))
                    .collect();
                details.push(format!(
                    "{scenario}: no curve ({e}); truth {}",
                    truth.join(" ")
                ));
                continue;
            }
        };
        let (mut worst, mut at, mut checked) = (0.0f64, 0, 0);
        for n in 1..=50 {
            let Some(g) = uniqueness_ground_truth(oracle, scenario, n, sel) else {
                continue;
            };
            if g.eligible < 100 {
                continue;
            }
            checked += 1;
            let d = (curve.at(n) - g.probability).abs();
            if d > worst {
                worst = d;
                at = n;
            }
        }
        ok &= worst <= 0.15;
        details.push(format!(
            "{scenario}: max |curve - truth| = {worst:.3} at N={at} over {checked} N"
        ));
    }
    ensure(ok, details.join("; "))
}

fn ordering(matrices: &BTreeMap<&str, SampleMatrix>) -> Outcome {
    let np = |s: Scenario| -> Result<f64, String> {
        let v = quantile_vector(&matrices[s.key()], 75.0).map_err(|e| e.to_string())?;
        fit_np(&v, FLOOR)
            .map(|f| f.n_p)
            .map_err(|e| format!("{s}: {e}"))
    };
    let (sk_r, lo_r, lo_lp) = (
        np(Scenario::SK_R)?,
        np(Scenario::LO_R)?,
        np(Scenario::LO_LP)?,
    );
    ensure(
        lo_r < sk_r && lo_lp < lo_r,
        format!("n_75: Lo_LP {lo_lp:.2} < Lo_R {lo_r:.2} < Sk_R {sk_r:.2}"),
    )
}

fn policy(oracle: &Oracle) -> Outcome {
    let pop = oracle.population();
    let ocfg = OracleConfig::censored(FLOOR);
    let mut rng = seed::rng(seed::derive(SEED, b"acceptance/policy"));
    let locations: Vec<&str> = pop
        .location_catalog()
        .iter()
        .map(|c| c.name.as_str())
        .collect();
    let skills: Vec<&str> = pop
        .skill_catalog()
        .iter()
        .map(|c| c.name.as_str())
        .collect();
    let (mut attempts, mut small, mut launched) = (0usize, 0usize, 0usize);
    while small < 10_000 {
        attempts += 1;
        let k = rng.gen_range(1..=6);
        let chosen: Vec<&str> = skills.choose_multiple(&mut rng, k).copied().collect();
        let loc = rng
            .gen_bool(0.8)
            .then(|| *locations.choose(&mut rng).unwrap());
        let spec = AudienceSpec::new(loc, chosen);
        if oracle.count(&spec) >= FLOOR {
            continue;
        }
        small += 1;
        let cfg = CampaignConfig::new(spec, None, PolicyMode::Enforced, rng.gen());
        if launch(oracle, &cfg, &ocfg)
            .map_err(|e| e.to_string())?
            .launched
        {
            launched += 1;
        }
    }

    // A member whose full profile isolates them.
    let sel = seed::selection(SEED);
    let (target, spec) = pop
        .users()
        .iter()
        .filter(|u| u.location.is_some() && u.skills.len() >= 19)
        .find_map(|u| {
            let spec = spec_for_target(oracle, &u.id, u.skills.len(), sel).ok()?;
            (oracle.count(&spec) == 1).then(|| (u.id.clone(), spec))
        })
        .ok_or("no uniquely identifiable member found")?;
    let mut cfg = CampaignConfig::new(spec, Some(target.clone()), PolicyMode::ClientSideOnly, SEED);
    cfg.activity = ActivityModel::always_active();
    let out = launch(oracle, &cfg, &ocfg).map_err(|e| e.to_string())?;
    let t = out.target_tally(&target);
    let ok = launched == 0
        && out.nanotarget_success
        && out.platform_report.impressions == u64::from(cfg.duration_days)
        && out.platform_report.clicks == u64::from(cfg.duration_days)
        && out.backend_clicks.len() == 3
        && t.impressions == 3;
    ensure(
        ok,
        format!(
            "{launched} of {small} under-floor Enforced launches went live ({attempts} specs drawn); client-side unique target: success={}, {} impressions / {} clicks / {} backend clicks over {} days",
            out.nanotarget_success,
            out.platform_report.impressions,
            out.platform_report.clicks,
            out.backend_clicks.len(),
            cfg.duration_days
        ),
    )
}

fn monte_carlo(oracle: &Oracle, curve: Option<&SuccessCurve>) -> Outcome {
    let curve = curve.ok_or("Lo_R success curve unavailable")?;
    let targets = pick_targets(oracle, 200, 13, seed::derive(SEED, b"acceptance/targets"))
        .map_err(|e| e.to_string())?;
    let plan = ExperimentPlan::new(targets, vec![13]);
    let report = run_experiment(
        oracle,
        &plan,
        Some(curve),
        &CampaignDefaults::default(),
        &OracleConfig::censored(FLOOR),
        seed::derive(SEED, b"acceptance/experiment"),
    )
    .map_err(|e| e.to_string())?;
    let observed = report.success_fraction(13).ok_or("no campaigns ran")?;
    let model = curve.at(13);
    ensure(
        (observed - model).abs() <= 0.10,
        format!("200 campaigns at N=13: success {observed:.3} vs curve {model:.3}"),
    )
}

fn read_tree(dir: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        out.insert(
            entry.file_name().to_string_lossy().into_owned(),
            fs::read(entry.path())?,
        );
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for threads in ["1", "4"] {
        let out = tmp.path().join(format!("run-{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_uniq-audit"))
            .args([
                "pipeline",
                "--preset",
                "calibrated",
                "--seed",
                "42",
                "--out",
            ])
            .arg(&out)
            .env("UNIQ_AUDIT_THREADS", threads)
            .env("RUST_LOG", "error")
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!(
                "pipeline with {threads} thread(s) exited with {status}"
            ));
        }
        trees.push(read_tree(&out).map_err(|e| e.to_string())?);
    }
    let differing: Vec<&String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    ensure(
        differing.is_empty() && trees[0].len() == trees[1].len(),
        format!(
            "{} files, 1 vs 4 threads, differing: {:?}",
            trees[0].len(),
            differing
        ),
    )
}

fn main() {
    let mut h = Harness { failed: 0 };
    h.check(1, "affected-member arithmetic", affected_arithmetic);
    h.check(2, "expected campaign successes", expected_successes_check);
    h.check(3, "fit recovery on a planted censored line", fit_recovery);

    let t = Instant::now();
    let data = Calibrated {
        pop: generate(&GeneratorConfig::calibrated()).expect("calibrated config is valid"),
    };
    let oracle = Oracle::new(&data.pop);
    let ocfg = OracleConfig::censored(FLOOR);
    let sel = seed::selection(SEED);
    let matrices: BTreeMap<&str, SampleMatrix> = [Scenario::SK_R, Scenario::LO_R, Scenario::LO_LP]
        .into_iter()
        .map(|s| (s.key(), build_matrix(&oracle, s, &ocfg, sel)))
        .collect();
    println!(
        "       calibrated population: {} members, floor {FLOOR}, samples ready in {:.1}s",
        data.pop.len(),
        t.elapsed().as_secs_f64()
    );
    let lo_r_curve = success_curve(&matrices["lo_r"], Scenario::LO_R).ok();

    h.check(
        4,
        "estimator vs brute-force uniqueness (Lo_R, Lo_LP)",
        || curve_vs_truth(&oracle, &matrices),
    );
    h.check(5, "scenario ordering at Q=75", || ordering(&matrices));
    h.check(6, "policy enforcement", || policy(&oracle));
    h.check(7, "Monte Carlo campaigns vs success curve at N=13", || {
        monte_carlo(&oracle, lo_r_curve.as_ref())
    });
    h.check(8, "pipeline determinism across thread counts", determinism);

    println!("{} of 8 criteria failed", h.failed);
    if h.failed > 0 {
        std::process::exit(1);
    }
}
