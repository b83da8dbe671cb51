//! Command dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use narrowgap::analysis::{sweep_and_fit, RichardsonCheck, SweepMetric, SweepResult};
use narrowgap::geometry::{validate_profile, ValidationReport};
use narrowgap::operators::{estimate_bounds, estimate_ellipticity, BoundEstimate};
use narrowgap::verification::{convergence_study, default_u_star, ConvergenceStudy, ManufacturedProblem};
use narrowgap::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{parse_number_list, RunConfig};
use crate::output::{ensure_dir, json_string, read_json, write_field_csv, write_json};
use crate::CliError;

/// Samples per tangential axis for the hypothesis checks.
const VALIDATE_SAMPLES: usize = 32;
const VALIDATE_TOL: f64 = 1e-9;
/// Quadrature grid for the ellipticity search.
const ELLIPTICITY_GRID: (usize, usize) = (33, 17);
const BOUND_SAMPLES: usize = 32;
/// `(max − min)/max` accepted for the gap comparability constants.
const COMPARABILITY_VARIATION: f64 = 0.05;
const MMS_ORDER: f64 = 2.0;
const MMS_ORDER_TOL: f64 = 0.2;
const DEFAULT_GRIDS: [usize; 3] = [17, 33, 65];

#[derive(Debug, Parser)]
#[command(name = "narrowgap", version, about = "Thin-gap elliptic solver and gradient-estimate verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the geometric hypotheses and estimate operator constants.
    Validate(CommonArgs),
    /// Solve at one epsilon and write the field and bound report.
    Solve(CommonArgs),
    /// Solve over a list of epsilons and fit the blow-up rate.
    Sweep(CommonArgs),
    /// Manufactured-solution convergence study.
    Mms(CommonArgs),
    /// Consolidate a sweep directory into an acceptance summary.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated, strictly decreasing.
    #[arg(long)]
    pub epsilons: Option<String>,
    /// Comma-separated grid sizes `G`, each used as `nx = nt = G`.
    #[arg(long)]
    pub grids: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub allow_degenerate_geometry: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.allow_degenerate_geometry {
            cfg.allow_degenerate = true;
        }
        Ok(cfg)
    }

    fn epsilon(&self, cfg: &RunConfig) -> Result<f64, CliError> {
        self.epsilon
            .or(cfg.epsilon)
            .ok_or_else(|| CliError::Usage("no epsilon given (--epsilon or [region] epsilon)".into()))
    }

    fn epsilons(&self, cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
        let list = match &self.epsilons {
            Some(s) => parse_number_list(s).map_err(|e| CliError::Usage(format!("--epsilons: {e}")))?,
            None => cfg.epsilons.clone(),
        };
        if list.is_empty() {
            return Err(CliError::Usage("no epsilons given (--epsilons or [region] epsilons)".into()));
        }
        Ok(list)
    }

    fn out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out DIR is required".into()))
    }
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    scenario: &'a str,
    epsilons: Vec<f64>,
}

fn write_run_record(dir: &Path, command: &str, cfg: &RunConfig, epsilons: Vec<f64>) -> Result<(), CliError> {
    write_json(
        &dir.join("run.json"),
        &RunRecord {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            scenario: &cfg.scenario,
            epsilons,
        },
    )
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Mms(a) => mms(a),
        Command::Report { input, out } => report(input, out.as_deref()),
    }
}

#[derive(Debug, Serialize)]
pub struct ValidateMember {
    pub epsilon: f64,
    pub validation: ValidationReport,
    pub accepted: bool,
    pub ellipticity: f64,
    pub bounds: BoundEstimate,
}

#[derive(Debug, Serialize)]
pub struct ValidateOutput {
    pub seed: u64,
    pub accepted: bool,
    pub members: Vec<ValidateMember>,
    /// `(max − min)/max` of `c1` over the members.
    pub c1_variation: f64,
    pub c2_variation: f64,
    pub comparability_stable: bool,
}

fn variation(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = values.fold(f64::INFINITY, f64::min);
    if max == min {
        0.0
    } else {
        (max - min) / max.abs()
    }
}

fn validate_epsilon(cfg: &RunConfig, epsilon: f64) -> Result<ValidateMember, CliError> {
    let region = cfg.region(epsilon)?;
    let validation = validate_profile(&region, VALIDATE_SAMPLES, VALIDATE_TOL)?;
    let (gx, gt) = ELLIPTICITY_GRID;
    let ellipticity = estimate_ellipticity(&cfg.op, &region, gx, gt, cfg.ellipticity_trials, cfg.seed)?;
    Ok(ValidateMember {
        epsilon,
        accepted: validation.accepted(),
        validation,
        ellipticity,
        bounds: estimate_bounds(&cfg.op, &region, BOUND_SAMPLES),
    })
}

fn validate(a: &CommonArgs) -> Result<(), CliError> {
    let cfg = a.load()?;
    let epsilons = match (&a.epsilons, a.epsilon) {
        (None, Some(e)) => vec![e],
        _ if a.epsilons.is_some() || !cfg.epsilons.is_empty() => a.epsilons(&cfg)?,
        _ => vec![a.epsilon(&cfg)?],
    };
    let members = epsilons
        .iter()
        .map(|&e| validate_epsilon(&cfg, e))
        .collect::<Result<Vec<_>, _>>()?;
    let c1_variation = variation(members.iter().map(|m| m.validation.c1));
    let c2_variation = variation(members.iter().map(|m| m.validation.c2));
    let out = ValidateOutput {
        seed: cfg.seed,
        accepted: members.iter().all(|m| m.accepted),
        c1_variation,
        c2_variation,
        comparability_stable: c1_variation < COMPARABILITY_VARIATION && c2_variation < COMPARABILITY_VARIATION,
        members,
    };
    print!("{}", json_string(&out));
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        write_json(&dir.join("validate.json"), &out)?;
    }
    if let Some(m) = out.members.iter().find(|m| !m.accepted) {
        m.validation.require()?;
    }
    Ok(())
}

/// Rejects regions that fail the hypotheses unless overridden.
fn require_valid(cfg: &RunConfig, epsilon: f64) -> Result<(), CliError> {
    let region = cfg.region(epsilon)?;
    validate_profile(&region, VALIDATE_SAMPLES, VALIDATE_TOL)?.require()?;
    Ok(())
}

fn solve(a: &CommonArgs) -> Result<(), CliError> {
    let cfg = a.load()?;
    let eps = a.epsilon(&cfg)?;
    let dir = a.out()?;
    require_valid(&cfg, eps)?;
    let (case, report) = cfg.scenario(eps)?.report()?;
    ensure_dir(dir)?;
    write_field_csv(&dir.join("field.csv"), &case)?;
    write_json(&dir.join("report.json"), &report)?;
    write_run_record(dir, "solve", &cfg, vec![eps])?;
    print!("{}", json_string(&report));
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RateFitRecord {
    pub scenario: String,
    pub metric: SweepMetric,
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub conclusive: bool,
    pub richardson: Vec<RichardsonCheck>,
    pub richardson_passed: bool,
}

impl RateFitRecord {
    fn new(scenario: &str, metric: SweepMetric, s: &SweepResult) -> Self {
        RateFitRecord {
            scenario: scenario.to_string(),
            metric,
            points: s.fit.points.clone(),
            slope: s.fit.slope,
            intercept: s.fit.intercept,
            r2: s.fit.r2,
            conclusive: s.fit.conclusive,
            richardson: s.members.iter().map(|m| m.richardson).collect(),
            richardson_passed: s.richardson_passed(),
        }
    }
}

fn sweep(a: &CommonArgs) -> Result<(), CliError> {
    let cfg = a.load()?;
    let epsilons = a.epsilons(&cfg)?;
    let dir = a.out()?;
    for &e in &epsilons {
        require_valid(&cfg, e)?;
    }
    let scenario = cfg.scenario(epsilons[0])?;
    let result = match a.jobs {
        None => sweep_and_fit(&scenario, &epsilons, cfg.metric)?,
        Some(0) => return Err(CliError::Usage("--jobs must be positive".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?
            .install(|| sweep_and_fit(&scenario, &epsilons, cfg.metric))?,
    };
    ensure_dir(dir)?;
    for m in &result.members {
        write_json(&dir.join(format!("report_{}.json", m.report.epsilon)), &m.report)?;
    }
    let record = RateFitRecord::new(&cfg.scenario, cfg.metric, &result);
    write_json(&dir.join("rate_fit.json"), &record)?;
    write_run_record(dir, "sweep", &cfg, epsilons)?;
    print!("{}", json_string(&record));
    if !record.richardson_passed {
        let worst = record.richardson.iter().map(|r| r.rel_diff).fold(0.0, f64::max);
        return Err(Error::Gate(format!("coarse/fine metric disagreement {worst:.3e} exceeds tolerance")).into());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct MmsRecord {
    pub epsilon: f64,
    pub study: ConvergenceStudy,
    pub final_order: f64,
    pub passed: bool,
}

fn mms(a: &CommonArgs) -> Result<(), CliError> {
    let cfg = a.load()?;
    let eps = a.epsilon(&cfg)?;
    let sizes: Vec<usize> = match &a.grids {
        None => DEFAULT_GRIDS.to_vec(),
        Some(s) => s
            .split(',')
            .map(|g| g.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Usage(format!("--grids: {e}")))?,
    };
    let grids: Vec<(usize, usize)> = sizes.iter().map(|&g| (g, g)).collect();
    let region = cfg.region(eps)?;
    let problem = ManufacturedProblem::new(cfg.op.clone(), region, default_u_star(cfg.op.ncomp, cfg.n - 1))?;
    let study = convergence_study(&problem, &grids, &cfg.solver)?;
    let final_order = study.final_order();
    let passed = study.monotone && (final_order - MMS_ORDER).abs() <= MMS_ORDER_TOL;
    let record = MmsRecord {
        epsilon: eps,
        study,
        final_order,
        passed,
    };
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        write_json(&dir.join("convergence.json"), &record)?;
        write_run_record(dir, "mms", &cfg, vec![eps])?;
    }
    print!("{}", json_string(&record));
    if !passed {
        return Err(Error::Gate(format!(
            "convergence order {final_order:.3} (monotone: {}) outside {MMS_ORDER} ± {MMS_ORDER_TOL}",
            record.study.monotone
        ))
        .into());
    }
    Ok(())
}

/// Largest `(max − min)/max` accepted for `c_low` across a sweep.
const C_LOW_VARIATION: f64 = 0.25;
/// Largest `max/min` accepted for `C_emp` across a sweep.
const C_EMP_SPREAD: f64 = 2.0;
const MISMATCH_SLOPE: f64 = -1.0;
const MISMATCH_SLOPE_TOL: f64 = 0.05;
const MISMATCH_MIN_R2: f64 = 0.99;
const MATCHED_SLOPE_TOL: f64 = 0.1;

fn field(v: &Value, key: &str, file: &str) -> Result<f64, CliError> {
    v[key]
        .as_f64()
        .ok_or_else(|| CliError::Usage(format!("{file}: missing numeric field {key:?}")))
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn report(input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let entries = std::fs::read_dir(input).map_err(|e| CliError::Io {
        path: input.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("report_") && n.ends_with(".json"))
        .collect();
    names.sort();
    let mut reports = Vec::with_capacity(names.len());
    for n in &names {
        let v = read_json(&input.join(n))?;
        reports.push((field(&v, "epsilon", n)?, v));
    }
    reports.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut gates = serde_json::Map::new();
    let mut summary = json!({ "epsilons": reports.iter().map(|r| r.0).collect::<Vec<_>>() });
    if !reports.is_empty() {
        let c_emp: Vec<f64> = reports.iter().map(|r| r.1["C_emp"].as_f64().unwrap_or(f64::NAN)).collect();
        let c_low: Vec<Option<f64>> = reports.iter().map(|r| r.1["c_low"].as_f64()).collect();
        let c_emp_spread = spread(&c_emp);
        summary["C_emp"] = json!(c_emp);
        summary["C_emp_spread"] = json!(c_emp_spread);
        gates.insert("C_emp_within_2x".into(), json!(c_emp_spread < C_EMP_SPREAD));
        let mismatched = c_low.iter().all(|c| c.is_some());
        summary["mismatch_at_origin"] = json!(mismatched);
        if mismatched {
            let lows: Vec<f64> = c_low.iter().map(|c| c.unwrap()).collect();
            let var = variation(lows.iter().cloned());
            summary["c_low"] = json!(lows);
            summary["c_low_variation"] = json!(var);
            gates.insert(
                "c_low_positive_stable".into(),
                json!(lows.iter().all(|&c| c > 0.0) && var < C_LOW_VARIATION),
            );
        }
        let rate_path = input.join("rate_fit.json");
        if rate_path.exists() {
            let rate = read_json(&rate_path)?;
            let slope = field(&rate, "slope", "rate_fit.json")?;
            let r2 = field(&rate, "r2", "rate_fit.json")?;
            let rate_ok = if mismatched {
                (slope - MISMATCH_SLOPE).abs() <= MISMATCH_SLOPE_TOL && r2 >= MISMATCH_MIN_R2
            } else {
                slope.abs() <= MATCHED_SLOPE_TOL
            };
            summary["rate_fit"] = json!({ "slope": slope, "r2": r2, "expected_slope": if mismatched { MISMATCH_SLOPE } else { 0.0 } });
            gates.insert("rate".into(), json!(rate_ok));
            gates.insert("richardson".into(), json!(rate["richardson_passed"].as_bool() == Some(true)));
        }
    }
    let conv_path = input.join("convergence.json");
    if conv_path.exists() {
        let conv = read_json(&conv_path)?;
        summary["mms_final_order"] = conv["final_order"].clone();
        gates.insert("mms".into(), json!(conv["passed"].as_bool() == Some(true)));
    }
    let val_path = input.join("validate.json");
    if val_path.exists() {
        let val = read_json(&val_path)?;
        gates.insert("hypotheses".into(), json!(val["accepted"].as_bool() == Some(true)));
        gates.insert(
            "comparability_stable".into(),
            json!(val["comparability_stable"].as_bool() == Some(true)),
        );
    }
    if gates.is_empty() {
        return Err(CliError::Usage(format!("{} holds no reports", input.display())));
    }
    let failed: Vec<String> = gates
        .iter()
        .filter(|(_, v)| v.as_bool() != Some(true))
        .map(|(k, _)| k.clone())
        .collect();
    summary["gates"] = Value::Object(gates);
    summary["passed"] = json!(failed.is_empty());
    let target = out.unwrap_or(input);
    ensure_dir(target)?;
    write_json(&target.join("summary.json"), &summary)?;
    print!("{}", json_string(&summary));
    if !failed.is_empty() {
        return Err(Error::Gate(format!("failed gates: {}", failed.join(", "))).into());
    }
    Ok(())
}
