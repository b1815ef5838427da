//! Command-line entry points. Every command writes its outputs plus a
//! [`RunManifest`] and is deterministic given its flags.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::campaign::{
    launch, pick_targets, run_experiment, spec_for_target, ActivityModel, CampaignConfig,
    CampaignDefaults, CampaignOutcome, ExperimentPlan, ExperimentReport, PolicyMode, Tally,
    EXPERIMENT_SKILL_COUNTS,
};
use crate::error::{Error, FitError, Result};
use crate::estimator::{
    bootstrap_quantiles, fit_np_with, run_scenarios_on, EstimatorConfig, FitResult, ReportRow,
    DEFAULT_BOOTSTRAP_ITERATIONS, DEFAULT_MIN_UNCENSORED_POINTS,
};
use crate::manifest::RunManifest;
use crate::methodology::{
    collect_samples, quantile_vector, read_quantile_csv, write_quantile_csv, SampleMatrix, Scenario,
};
use crate::oracle::{AudienceSpec, Oracle, OracleConfig};
use crate::population::{generate, ingest, summarize, GeneratorConfig, Population, ProfileFormat};
use crate::risk::{
    affected_from_fit, estimate_affected, success_curve, uniqueness_ground_truth,
    write_affected_csv, AffectedEstimate, SuccessCurve,
};
use crate::seed;

/// Reporting floor at desk scale (100k members).
pub const DESK_FLOOR: u64 = 30;

/// Probabilities of the affected-members table.
pub const AFFECTED_PROBABILITIES: [f64; 6] = [0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

#[derive(Debug, Parser)]
#[command(
    name = "uniq-audit",
    version,
    about = "Estimate how uniquely location + skills single out members of a professional network"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic population.
    Generate(GenerateArgs),
    /// Skill-count and audience-size distributions of a population.
    Summarize(SummarizeArgs),
    /// Audience size of a location + skills predicate.
    Audience(AudienceArgs),
    /// Fit the log-linear decay from quantile data or a population.
    Fit(FitArgs),
    /// Fits for all four scenarios at the requested quantiles.
    Scenarios(ScenariosArgs),
    /// Success probability of a nanotargeting campaign against N.
    Curve(CurveArgs),
    /// Members exposed to nanotargeting.
    Affected(AffectedArgs),
    /// Simulate one campaign against a target.
    Campaign(CampaignArgs),
    /// Simulate a proof-of-concept experiment.
    Experiment(ExperimentArgs),
    /// Generate, analyse and simulate end to end into one directory.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 5k skills, 200 locations.
    Desk,
    /// 300 skills, 5 locations; used for the estimator-vs-oracle checks.
    Calibrated,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GeneratorArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub n_users: Option<usize>,
    #[arg(long)]
    pub n_skills: Option<usize>,
    #[arg(long)]
    pub skill_exponent: Option<f64>,
    #[arg(long)]
    pub n_locations: Option<usize>,
    #[arg(long)]
    pub location_exponent: Option<f64>,
    #[arg(long)]
    pub p_zero_skills: Option<f64>,
    #[arg(long)]
    pub total_base: Option<u64>,
}

impl GeneratorArgs {
    pub fn config(&self, seed: u64) -> GeneratorConfig {
        let base = match self.preset {
            Preset::Desk => GeneratorConfig::default(),
            Preset::Calibrated => GeneratorConfig::calibrated(),
        };
        GeneratorConfig {
            n_users: self.n_users.unwrap_or(base.n_users),
            n_skills: self.n_skills.unwrap_or(base.n_skills),
            skill_popularity_exponent: self
                .skill_exponent
                .unwrap_or(base.skill_popularity_exponent),
            n_locations: self.n_locations.unwrap_or(base.n_locations),
            location_popularity_exponent: self
                .location_exponent
                .unwrap_or(base.location_popularity_exponent),
            p_zero_skills: self.p_zero_skills.unwrap_or(base.p_zero_skills),
            total_base: self.total_base.unwrap_or(base.total_base),
            seed,
            ..base
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Population file (JSON lines); the manifest goes next to it.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SummarizeArgs {
    #[arg(long)]
    #[serde(skip)]
    pub population: PathBuf,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AudienceArgs {
    #[arg(long)]
    #[serde(skip)]
    pub population: PathBuf,
    #[arg(long)]
    pub location: Option<String>,
    /// Comma-separated skills, all required.
    #[arg(long, value_delimiter = ',')]
    pub skills: Vec<String>,
    #[arg(long, default_value_t = DESK_FLOOR)]
    pub floor: u64,
    /// Report the true count instead of the floored figure.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitOptions {
    #[arg(long, default_value_t = DESK_FLOOR)]
    pub floor: u64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![50.0, 75.0, 90.0])]
    pub quantiles: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_ITERATIONS)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

impl FitOptions {
    fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            bootstrap_iterations: self.bootstrap,
            quantiles: self.quantiles.clone(),
            min_uncensored_points: DEFAULT_MIN_UNCENSORED_POINTS,
            seed: self.seed,
        }
    }

    fn oracle(&self) -> OracleConfig {
        OracleConfig::censored(self.floor)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// `N,Q,AS` quantile data; no bootstrap is possible from it.
    #[arg(
        long,
        conflicts_with = "population",
        required_unless_present = "population"
    )]
    #[serde(skip)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub population: Option<PathBuf>,
    #[arg(long, default_value_t = Scenario::LO_R)]
    pub scenario: Scenario,
    #[command(flatten)]
    pub fit: FitOptions,
    /// JSON report.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScenariosArgs {
    #[arg(long)]
    #[serde(skip)]
    pub population: PathBuf,
    #[command(flatten)]
    pub fit: FitOptions,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CurveArgs {
    #[arg(long)]
    #[serde(skip)]
    pub population: PathBuf,
    #[arg(long, default_value_t = Scenario::LO_R)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = DESK_FLOOR)]
    pub floor: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Also write brute-force uniqueness per N (slow on large populations).
    #[arg(long)]
    pub truth: bool,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AffectedArgs {
    /// Uniqueness probabilities; with `--population` each is fitted.
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
    /// Skills required (manual mode).
    #[arg(long)]
    pub n: Option<usize>,
    /// Share of members listing at least `n` skills (manual mode).
    #[arg(long)]
    pub frac: Option<f64>,
    #[arg(long)]
    pub base: Option<u64>,
    #[arg(long, conflicts_with_all = ["n", "frac"])]
    #[serde(skip)]
    pub population: Option<PathBuf>,
    #[arg(long, default_value_t = Scenario::LO_R)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = DESK_FLOOR)]
    pub floor: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// CSV table; printed to stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyArg {
    Enforced,
    Clientside,
}

impl From<PolicyArg> for PolicyMode {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Enforced => PolicyMode::Enforced,
            PolicyArg::Clientside => PolicyMode::ClientSideOnly,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DeliveryArgs {
    #[arg(long, default_value_t = 3)]
    pub days: u32,
    #[arg(long, default_value_t = 10.0)]
    pub budget: f64,
    #[arg(long, default_value_t = 0.05)]
    pub cost_per_impression: f64,
    #[arg(long, default_value_t = 0.9)]
    pub p_active: f64,
    #[arg(long, default_value_t = 0.02)]
    pub bystander_click: f64,
}

impl DeliveryArgs {
    fn defaults(&self) -> CampaignDefaults {
        CampaignDefaults {
            duration_days: self.days,
            budget: self.budget,
            cost_per_impression: self.cost_per_impression,
            activity: ActivityModel {
                p_daily_active: self.p_active,
                bystander_click: self.bystander_click,
                ..ActivityModel::default()
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CampaignArgs {
    #[arg(long)]
    #[serde(skip)]
    pub population: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub skills_count: usize,
    #[arg(long, value_enum, default_value_t = PolicyArg::Clientside)]
    pub policy: PolicyArg,
    #[command(flatten)]
    pub delivery: DeliveryArgs,
    #[arg(long, default_value_t = DESK_FLOOR)]
    pub floor: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// JSON report.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    #[arg(long)]
    #[serde(skip)]
    pub population: PathBuf,
    /// Target ids; drawn at random when absent.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub n_targets: usize,
    #[arg(long, value_delimiter = ',', default_values_t = EXPERIMENT_SKILL_COUNTS.to_vec())]
    pub skill_counts: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[command(flatten)]
    pub delivery: DeliveryArgs,
    #[arg(long, default_value_t = DESK_FLOOR)]
    pub floor: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = DESK_FLOOR)]
    pub floor: u64,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_ITERATIONS)]
    pub bootstrap: usize,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Summarize(a) => cmd_summarize(&a),
        Command::Audience(a) => cmd_audience(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Scenarios(a) => cmd_scenarios(&a),
        Command::Curve(a) => cmd_curve(&a),
        Command::Affected(a) => cmd_affected(&a),
        Command::Campaign(a) => cmd_campaign(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Pipeline(a) => cmd_pipeline(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write a file through a buffered writer and record it in the manifest.
fn emit<F>(manifest: &mut RunManifest, path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))?;
    drop(w);
    manifest.output(path)?;
    Ok(())
}

fn emit_json<T: Serialize>(manifest: &mut RunManifest, path: &Path, value: &T) -> Result<()> {
    emit(manifest, path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

fn load(path: &Path) -> Result<Population> {
    let ingested = ingest(path, ProfileFormat::JsonLines)?;
    Ok(ingested.population)
}

fn manifest_path_for(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let cfg = a.generator.config(a.seed);
    let pop = generate(&cfg)?;
    let mut m = RunManifest::new("generate", &cfg)?;
    m.seed("population", cfg.seed);
    emit(&mut m, &a.out, |w| {
        pop.write_jsonl(w).map_err(|e| Error::io(&a.out, e))
    })?;
    m.write(&manifest_path_for(&a.out))
}

fn write_summary(m: &mut RunManifest, pop: &Population, dir: &Path) -> Result<()> {
    let s = summarize(pop);
    emit_json(m, &dir.join("summary.json"), &s)?;
    emit(m, &dir.join("skill_cdf.csv"), |w| s.write_skill_cdf_csv(w))?;
    emit(m, &dir.join("audience_cdf.csv"), |w| {
        s.write_audience_cdf_csv(w)
    })
}

pub fn cmd_summarize(a: &SummarizeArgs) -> Result<()> {
    let pop = load(&a.population)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("summarize", a)?;
    m.input(&a.population)?;
    write_summary(&mut m, &pop, &a.out)?;
    m.write(&a.out.join("manifest.json"))
}

#[derive(Debug, Serialize)]
struct AudienceReport<'a> {
    location: Option<&'a str>,
    skills: Vec<&'a str>,
    floor: u64,
    exact: bool,
    audience_size: u64,
}

pub fn cmd_audience(a: &AudienceArgs) -> Result<()> {
    let pop = load(&a.population)?;
    let oracle = Oracle::new(&pop);
    let spec = AudienceSpec::new(
        a.location.as_deref(),
        a.skills
            .iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty()),
    );
    let cfg = OracleConfig {
        floor: a.floor,
        censored: !a.exact,
    };
    let report = AudienceReport {
        location: spec.location.as_deref(),
        skills: spec.skills.iter().map(String::as_str).collect(),
        floor: a.floor,
        exact: a.exact,
        audience_size: oracle.audience_size(&spec, &cfg),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

type QuantileFit = (f64, std::result::Result<FitResult, FitError>);

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let est = a.fit.estimator();
    est.validate()?;
    let mut m = RunManifest::new("fit", a)?;
    let (scenario, fits): (Option<Scenario>, Vec<QuantileFit>) = if let Some(input) = &a.input {
        m.input(input)?;
        let f = File::open(input).map_err(|e| Error::io(input, e))?;
        let vectors = read_quantile_csv(f)?;
        if vectors.is_empty() {
            return Err(Error::data(format!(
                "{} holds no quantile rows",
                input.display()
            )));
        }
        let fits = vectors
            .iter()
            .map(|v| {
                (
                    v.q,
                    fit_np_with(v, a.fit.floor, DEFAULT_MIN_UNCENSORED_POINTS),
                )
            })
            .collect();
        (None, fits)
    } else {
        let path = a.population.as_ref().expect("clap enforces one input");
        m.input(path)?;
        let pop = load(path)?;
        let oracle = Oracle::new(&pop);
        m.seed("selection", seed::selection(a.fit.seed))
            .seed("bootstrap", a.fit.seed);
        let samples = collect_samples(&oracle, a.scenario, seed::selection(a.fit.seed));
        let fits = bootstrap_quantiles(&samples, &est, &a.fit.oracle())?;
        (
            Some(a.scenario),
            est.quantiles.iter().copied().zip(fits).collect(),
        )
    };
    let rows: Vec<ReportRow> = fits
        .iter()
        .map(|(q, r)| ReportRow::new(scenario, *q, r))
        .collect();
    emit_json(&mut m, &a.out, &rows)?;
    m.write(&manifest_path_for(&a.out))?;
    for (q, r) in &fits {
        match r {
            Ok(f) => println!(
                "Q={q}: n_p = {:.2} (A = {:.4}, B = {:.4}, R2 = {:.3})",
                f.n_p, f.a, f.b, f.r_squared
            ),
            Err(e) => eprintln!("Q={q}: {e}"),
        }
    }
    if let Some(e) = fits
        .iter()
        .find_map(|(_, r)| r.as_ref().err())
        .filter(|_| fits.iter().all(|(_, r)| r.is_err()))
    {
        eprintln!("hint: lower --floor, use lower quantiles or a larger population so at least {DEFAULT_MIN_UNCENSORED_POINTS} values sit above the floor");
        return Err(e.clone().into());
    }
    Ok(())
}

fn all_samples(oracle: &Oracle, seed_root: u64) -> Vec<crate::methodology::ScenarioSamples> {
    Scenario::ALL
        .iter()
        .map(|&s| collect_samples(oracle, s, seed::selection(seed_root)))
        .collect()
}

fn write_scenarios(
    m: &mut RunManifest,
    dir: &Path,
    samples: &[crate::methodology::ScenarioSamples],
    fit: &FitOptions,
) -> Result<()> {
    let ocfg = fit.oracle();
    for s in samples {
        let matrix = SampleMatrix::from_samples(s, &ocfg);
        let vectors = fit
            .quantiles
            .iter()
            .map(|&q| quantile_vector(&matrix, q))
            .collect::<Result<Vec<_>>>()?;
        emit(m, &dir.join(format!("quantiles_{}.csv", s.scenario)), |w| {
            write_quantile_csv(&vectors, w)
        })?;
    }
    let table = run_scenarios_on(samples, &fit.estimator(), &ocfg)?;
    emit(m, &dir.join("table1.json"), |w| {
        table.write_json(&mut *w)?;
        w.write_all(b"\n").map_err(|e| Error::io("table1.json", e))
    })?;
    emit(m, &dir.join("table1.csv"), |w| table.write_csv(w))
}

pub fn cmd_scenarios(a: &ScenariosArgs) -> Result<()> {
    a.fit.estimator().validate()?;
    let pop = load(&a.population)?;
    let oracle = Oracle::new(&pop);
    create_dir(&a.out)?;
    let mut m = RunManifest::new("scenarios", a)?;
    m.input(&a.population)?;
    m.seed("selection", seed::selection(a.fit.seed))
        .seed("bootstrap", a.fit.seed);
    let samples = all_samples(&oracle, a.fit.seed);
    write_scenarios(&mut m, &a.out, &samples, &a.fit)?;
    m.write(&a.out.join("manifest.json"))
}

#[derive(Debug, Serialize)]
struct CurveStatus {
    scenario: Scenario,
    failed_fits: Option<usize>,
    error: Option<String>,
}

fn write_curve(
    m: &mut RunManifest,
    dir: &Path,
    matrix: &SampleMatrix,
    scenario: Scenario,
) -> Result<(CurveStatus, Option<SuccessCurve>)> {
    match success_curve(matrix, scenario) {
        Ok(c) => {
            emit(m, &dir.join(format!("curve_{scenario}.csv")), |w| {
                c.write_csv(w)
            })?;
            Ok((
                CurveStatus {
                    scenario,
                    failed_fits: Some(c.failed_fits),
                    error: None,
                },
                Some(c),
            ))
        }
        Err(Error::Fit(e)) => {
            log::warn!("{scenario} success curve: {e}");
            Ok((
                CurveStatus {
                    scenario,
                    failed_fits: None,
                    error: Some(e.to_string()),
                },
                None,
            ))
        }
        Err(e) => Err(e),
    }
}

pub fn cmd_curve(a: &CurveArgs) -> Result<()> {
    if !a.scenario.use_location {
        log::warn!(
            "success curves describe location + skills campaigns; {} ignores the location",
            a.scenario
        );
    }
    let pop = load(&a.population)?;
    let oracle = Oracle::new(&pop);
    create_dir(&a.out)?;
    let mut m = RunManifest::new("curve", a)?;
    m.input(&a.population)?;
    let sel = seed::selection(a.seed);
    m.seed("selection", sel);
    let matrix = SampleMatrix::from_samples(
        &collect_samples(&oracle, a.scenario, sel),
        &OracleConfig::censored(a.floor),
    );
    let curve = success_curve(&matrix, a.scenario)?;
    emit(
        &mut m,
        &a.out.join(format!("curve_{}.csv", a.scenario)),
        |w| curve.write_csv(w),
    )?;
    if a.truth {
        let truth: Vec<_> = (1..=crate::population::MAX_SKILLS)
            .filter_map(|n| uniqueness_ground_truth(&oracle, a.scenario, n, sel))
            .collect();
        emit(
            &mut m,
            &a.out.join(format!("truth_{}.csv", a.scenario)),
            |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["N", "eligible", "unique", "probability", "curve"])?;
                for g in &truth {
                    out.write_record([
                        g.n.to_string(),
                        g.eligible.to_string(),
                        g.unique.to_string(),
                        format!("{:.6}", g.probability),
                        format!("{:.6}", curve.at(g.n)),
                    ])?;
                }
                out.flush().map_err(|e| Error::io("truth.csv", e))?;
                Ok(())
            },
        )?;
    }
    m.write(&a.out.join("manifest.json"))
}

fn affected_rows(
    matrix: &SampleMatrix,
    pop: &Population,
    ps: &[f64],
    base: u64,
) -> Vec<AffectedEstimate> {
    let s = summarize(pop);
    ps.iter()
        .filter_map(|&p| {
            match affected_from_fit(matrix, &s.users_with_at_least, s.n_with_skills, p, base) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("p = {p}: {e}");
                    None
                }
            }
        })
        .collect()
}

pub fn cmd_affected(a: &AffectedArgs) -> Result<()> {
    let (rows, m) = if let Some(path) = &a.population {
        let pop = load(path)?;
        let oracle = Oracle::new(&pop);
        let mut m = RunManifest::new("affected", a)?;
        m.input(path)?;
        let sel = seed::selection(a.seed);
        m.seed("selection", sel);
        let matrix = SampleMatrix::from_samples(
            &collect_samples(&oracle, a.scenario, sel),
            &OracleConfig::censored(a.floor),
        );
        let rows = affected_rows(&matrix, &pop, &a.p, a.base.unwrap_or(pop.total_base()));
        if rows.is_empty() {
            return Err(Error::data("no requested probability could be fitted"));
        }
        (rows, Some(m))
    } else {
        let (Some(n), Some(frac)) = (a.n, a.frac) else {
            return Err(Error::config(
                "manual mode needs --n and --frac (or pass --population)",
            ));
        };
        let base = a.base.unwrap_or(crate::population::DEFAULT_TOTAL_BASE);
        let rows =
            a.p.iter()
                .map(|&p| estimate_affected(p, n, frac, base))
                .collect::<Result<Vec<_>>>()?;
        (
            rows,
            a.out
                .as_ref()
                .map(|_| RunManifest::new("affected", a))
                .transpose()?,
        )
    };
    for r in &rows {
        println!(
            "p={} N={} frac={:.4}: {:.2}M members ({:.1}%)",
            r.p_uniqueness,
            r.n_required,
            r.frac_with_n_or_more,
            r.affected_millions(),
            r.affected_pct()
        );
    }
    if let Some(out) = &a.out {
        let mut m = m.expect("manifest exists whenever --out is given");
        emit(&mut m, out, |w| write_affected_csv(&rows, w))?;
        m.write(&manifest_path_for(out))?;
    }
    Ok(())
}

/// Campaign report mirroring the three tallies of a field experiment.
#[derive(Debug, Serialize)]
pub struct CampaignReport {
    pub target: String,
    pub skills_count: usize,
    pub policy: PolicyMode,
    pub spec: AudienceSpec,
    pub true_audience: u64,
    pub platform_report: Tally,
    pub user_report: Tally,
    pub backend_clicks: usize,
    pub cost: f64,
    pub outcome: CampaignOutcome,
}

pub fn cmd_campaign(a: &CampaignArgs) -> Result<()> {
    let pop = load(&a.population)?;
    let oracle = Oracle::new(&pop);
    let sel = seed::selection(a.seed);
    let spec = spec_for_target(&oracle, &a.target, a.skills_count, sel)?;
    let defaults = a.delivery.defaults();
    let cfg = CampaignConfig {
        campaign_id: format!("{}-n{}", a.target, a.skills_count),
        spec: spec.clone(),
        target: Some(a.target.clone()),
        duration_days: defaults.duration_days,
        budget: defaults.budget,
        cost_per_impression: defaults.cost_per_impression,
        policy: a.policy.into(),
        activity: defaults.activity,
        seed: seed::derive(a.seed, b"campaign"),
    };
    let outcome = launch(&oracle, &cfg, &OracleConfig::censored(a.floor))?;
    let report = CampaignReport {
        target: a.target.clone(),
        skills_count: a.skills_count,
        policy: cfg.policy,
        spec,
        true_audience: oracle.count(&cfg.spec),
        platform_report: outcome.platform_report,
        user_report: outcome.target_tally(&a.target),
        backend_clicks: outcome.backend_clicks.len(),
        cost: outcome.cost,
        outcome,
    };
    let mut m = RunManifest::new("campaign", a)?;
    m.input(&a.population)?;
    m.seed("selection", sel).seed("campaign", cfg.seed);
    emit_json(&mut m, &a.out, &report)?;
    m.write(&manifest_path_for(&a.out))?;
    let o = &report.outcome;
    if o.launched {
        println!(
            "launched: {} impressions, {} clicks, ${:.2}; nanotargeting {}",
            o.platform_report.impressions,
            o.platform_report.clicks,
            o.cost,
            if o.nanotarget_success {
                "succeeded"
            } else {
                "failed"
            }
        );
    } else {
        println!("not launched: audience below the floor of {}", a.floor);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_experiment(
    m: &mut RunManifest,
    dir: &Path,
    oracle: &Oracle,
    plan: &ExperimentPlan,
    curve: Option<&SuccessCurve>,
    delivery: &CampaignDefaults,
    floor: u64,
    seed_root: u64,
) -> Result<ExperimentReport> {
    let report = run_experiment(
        oracle,
        plan,
        curve,
        delivery,
        &OracleConfig::censored(floor),
        seed::derive(seed_root, b"experiment"),
    )?;
    emit_json(m, &dir.join("experiment.json"), &report)?;
    emit(m, &dir.join("experiment.csv"), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "skills",
            "campaigns",
            "model_probability",
            "expected_successes",
            "observed_successes",
        ])?;
        for s in &report.summary {
            out.write_record([
                s.skill_count.to_string(),
                s.campaigns.to_string(),
                s.model_probability
                    .map_or_else(String::new, |p| format!("{p:.2}")),
                s.expected_successes
                    .map_or_else(String::new, |e| format!("{e:.2}")),
                s.observed_successes.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("experiment.csv", e))?;
        Ok(())
    })?;
    Ok(report)
}

fn experiment_plan(
    oracle: &Oracle,
    targets: &[String],
    n_targets: usize,
    counts: &[usize],
    reps: usize,
    seed_root: u64,
) -> Result<ExperimentPlan> {
    let targets = if targets.is_empty() {
        let min = counts.iter().copied().max().unwrap_or(1);
        pick_targets(oracle, n_targets, min, seed::derive(seed_root, b"targets"))?
    } else {
        targets.to_vec()
    };
    let mut plan = ExperimentPlan::new(targets, counts.to_vec());
    plan.repetitions = reps;
    Ok(plan)
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let pop = load(&a.population)?;
    let oracle = Oracle::new(&pop);
    create_dir(&a.out)?;
    let mut m = RunManifest::new("experiment", a)?;
    m.input(&a.population)?;
    let sel = seed::selection(a.seed);
    m.seed("selection", sel)
        .seed("experiment", seed::derive(a.seed, b"experiment"));
    let matrix = SampleMatrix::from_samples(
        &collect_samples(&oracle, Scenario::LO_R, sel),
        &OracleConfig::censored(a.floor),
    );
    let (_, curve) = write_curve(&mut m, &a.out, &matrix, Scenario::LO_R)?;
    let plan = experiment_plan(
        &oracle,
        &a.targets,
        a.n_targets,
        &a.skill_counts,
        a.repetitions,
        a.seed,
    )?;
    let report = write_experiment(
        &mut m,
        &a.out,
        &oracle,
        &plan,
        curve.as_ref(),
        &a.delivery.defaults(),
        a.floor,
        a.seed,
    )?;
    m.write(&a.out.join("manifest.json"))?;
    for s in &report.summary {
        println!(
            "N={:2}: {} of {} campaigns succeeded (expected {})",
            s.skill_count,
            s.observed_successes,
            s.campaigns,
            s.expected_successes
                .map_or_else(|| "n/a".into(), |e| format!("{e:.2}"))
        );
    }
    Ok(())
}

/// Full run into `out`: population, summary, scenario fits, success
/// curves, affected-member table and a simulated experiment.
pub fn cmd_pipeline(a: &PipelineArgs) -> Result<()> {
    let fit = FitOptions {
        floor: a.floor,
        quantiles: vec![50.0, 75.0, 90.0],
        bootstrap: a.bootstrap,
        seed: a.seed,
    };
    fit.estimator().validate()?;
    let gen = a.generator.config(a.seed);
    create_dir(&a.out)?;
    let mut m = RunManifest::new("pipeline", a)?;
    m.seed("population", gen.seed)
        .seed("selection", seed::selection(a.seed))
        .seed("experiment", seed::derive(a.seed, b"experiment"));

    log::info!("generating {} members", gen.n_users);
    let pop = generate(&gen)?;
    emit(&mut m, &a.out.join("population.jsonl"), |w| {
        pop.write_jsonl(w)
            .map_err(|e| Error::io("population.jsonl", e))
    })?;
    write_summary(&mut m, &pop, &a.out)?;

    let oracle = Oracle::new(&pop);
    log::info!("collecting audience samples");
    let samples = all_samples(&oracle, a.seed);
    log::info!("fitting scenarios ({} bootstrap iterations)", a.bootstrap);
    write_scenarios(&mut m, &a.out, &samples, &fit)?;

    let ocfg = fit.oracle();
    let mut statuses = Vec::new();
    let mut lo_r = None;
    for s in samples.iter().filter(|s| s.scenario.use_location) {
        let matrix = SampleMatrix::from_samples(s, &ocfg);
        let (status, curve) = write_curve(&mut m, &a.out, &matrix, s.scenario)?;
        statuses.push(status);
        if s.scenario == Scenario::LO_R {
            let rows = affected_rows(&matrix, &pop, &AFFECTED_PROBABILITIES, pop.total_base());
            emit(&mut m, &a.out.join("affected.csv"), |w| {
                write_affected_csv(&rows, w)
            })?;
            lo_r = curve;
        }
    }
    emit_json(&mut m, &a.out.join("curves.json"), &statuses)?;

    log::info!("simulating experiment");
    let plan = experiment_plan(&oracle, &[], 3, &EXPERIMENT_SKILL_COUNTS, 1, a.seed)?;
    let delivery = CampaignDefaults::default();
    write_experiment(
        &mut m,
        &a.out,
        &oracle,
        &plan,
        lo_r.as_ref(),
        &delivery,
        a.floor,
        a.seed,
    )?;
    m.write(&a.out.join("manifest.json"))
}
