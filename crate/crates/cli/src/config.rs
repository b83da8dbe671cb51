//! Run configuration: a sectioned `key = value` file.
//!
//! ```text
//! [region]
//! n = 2
//! epsilon = 0.05
//! epsilons = 0.1, 0.05, 0.025, 0.0125
//! r_solve = 1
//! r_analyze = 0.5
//! h1 = "0.5*x1^2"
//! h2 = "-0.5*x1^2"
//!
//! [operator]
//! kind = lame
//! lame_lambda = 1
//! lame_mu = 1
//!
//! [data]
//! g_plus = "1", "0.5"
//! g_minus = "0", "0"
//!
//! [solver]
//! nx = 129
//! nt = 65
//! tol = 1e-10
//! method = auto
//!
//! [analysis]
//! R0 = 0.25
//! scenario = lame_constant_mismatch
//! metric = center_grad
//! seed = 7
//!
//! [flags]
//! allow_degenerate_geometry = false
//! lateral_closure = utilde
//! ```
//!
//! Expressions are quoted polynomials in `x1..x{n-1}` (profiles, data) or
//! `x1..xn` (custom coefficients). Lists are comma separated. Unknown
//! sections, unknown keys and repeated keys are rejected.
//!
//! A custom operator sets `ncomp` and any of `a_i_j_al_be`, `b_i_j_al`,
//! `c_i_j_be`, `d_i_j` (1-based indices); unset entries are zero.

use std::collections::BTreeMap;
use std::path::Path;

use ini::{Ini, ParseOption};
use narrowgap::analysis::{Scenario, SweepMetric, DEFAULT_R0};
use narrowgap::auxiliary::BoundaryData;
use narrowgap::geometry::{GapProfile, NarrowRegion};
use narrowgap::mesh_solver::{LateralClosure, SolveMethod, SolverOptions};
use narrowgap::operators::EllipticOperator;
use narrowgap::{parse_expression, PolynomialField};

use crate::CliError;

const SECTIONS: [&str; 6] = ["region", "operator", "data", "solver", "analysis", "flags"];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n: usize,
    pub epsilon: Option<f64>,
    pub epsilons: Vec<f64>,
    pub r_solve: f64,
    pub r_analyze: f64,
    pub profile: GapProfile,
    pub op: EllipticOperator,
    pub data: BoundaryData,
    pub nx: usize,
    pub nt: usize,
    pub solver: SolverOptions,
    pub r0: f64,
    pub scenario: String,
    pub metric: SweepMetric,
    pub seed: u64,
    pub ellipticity_trials: usize,
    pub allow_degenerate: bool,
    pub closure: LateralClosure,
}

fn config_err(section: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("[{section}] {key}: {msg}"))
}

/// Keys of one section, consumed as they are read.
struct Section {
    name: &'static str,
    entries: BTreeMap<String, String>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| config_err(self.name, key, format!("{e} in {v:?}"))),
        }
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        match self.parse::<f64>(key)? {
            Some(v) if !v.is_finite() => Err(config_err(self.name, key, "not finite")),
            other => Ok(other),
        }
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>, CliError> {
        match self.take(key).as_deref() {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(v) => Err(config_err(self.name, key, format!("expected true or false, got {v:?}"))),
        }
    }

    fn expression(&mut self, key: &str, n_vars: usize) -> Result<Option<PolynomialField>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => {
                let text = unquote(&v).map_err(|e| config_err(self.name, key, e))?;
                parse_expression(text, n_vars)
                    .map(Some)
                    .map_err(|e| config_err(self.name, key, e))
            }
        }
    }

    fn expression_list(&mut self, key: &str, n_vars: usize) -> Result<Option<Vec<PolynomialField>>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => split_list(&v)
                .into_iter()
                .map(|item| {
                    let text = unquote(item).map_err(|e| config_err(self.name, key, e))?;
                    parse_expression(text, n_vars).map_err(|e| config_err(self.name, key, e))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn finish(self) -> Result<(), CliError> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(config_err(self.name, k, "unknown key")),
        }
    }
}

fn split_list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).collect()
}

/// Parses a comma-separated list of numbers.
pub fn parse_number_list(v: &str) -> Result<Vec<f64>, String> {
    split_list(v)
        .into_iter()
        .map(|s| match s.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(format!("{s:?} is not a finite number")),
        })
        .collect()
}

/// Strips one pair of double quotes; expressions must be quoted.
fn unquote(v: &str) -> Result<&str, String> {
    let v = v.trim();
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        Ok(&v[1..v.len() - 1])
    } else {
        Err(format!("expression {v:?} must be a quoted string"))
    }
}

fn sections(text: &str) -> Result<BTreeMap<&'static str, Section>, CliError> {
    let opt = ParseOption {
        enabled_quote: false,
        enabled_escape: false,
        ..ParseOption::default()
    };
    let ini = Ini::load_from_str_opt(text, opt).map_err(|e| CliError::Config(e.to_string()))?;
    let mut out: BTreeMap<&'static str, Section> = BTreeMap::new();
    for (name, props) in ini.iter() {
        let Some(name) = name else {
            if let Some((k, _)) = props.iter().next() {
                return Err(CliError::Config(format!("key {k:?} outside any section")));
            }
            continue;
        };
        let Some(&known) = SECTIONS.iter().find(|s| **s == name) else {
            return Err(CliError::Config(format!("unknown section [{name}]")));
        };
        if out.contains_key(known) {
            return Err(CliError::Config(format!("section [{name}] appears twice")));
        }
        let mut entries = BTreeMap::new();
        for (k, v) in props.iter() {
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(config_err(known, k, "set twice"));
            }
        }
        out.insert(known, Section { name: known, entries });
    }
    Ok(out)
}

/// Index tuple from `prefix_i_j_..`, 1-based in the file, 0-based here.
fn coefficient_index(key: &str, prefix: &str, bounds: &[usize]) -> Option<Result<Vec<usize>, String>> {
    let rest = key.strip_prefix(prefix)?.strip_prefix('_')?;
    let parts: Vec<&str> = rest.split('_').collect();
    if parts.len() != bounds.len() {
        return Some(Err(format!("expected {} indices", bounds.len())));
    }
    let mut idx = Vec::with_capacity(parts.len());
    for (p, &b) in parts.iter().zip(bounds) {
        match p.parse::<usize>() {
            Ok(k) if (1..=b).contains(&k) => idx.push(k - 1),
            _ => return Some(Err(format!("index {p:?} not in 1..={b}"))),
        }
    }
    Some(Ok(idx))
}

fn custom_operator(sec: &mut Section, n: usize) -> Result<EllipticOperator, CliError> {
    let nc: usize = sec
        .parse("ncomp")?
        .ok_or_else(|| config_err("operator", "ncomp", "required for kind = custom"))?;
    if nc == 0 {
        return Err(config_err("operator", "ncomp", "must be positive"));
    }
    let zero = PolynomialField::zero(n);
    let mut a = vec![zero.clone(); nc * nc * n * n];
    let mut b = vec![zero.clone(); nc * nc * n];
    let mut c = vec![zero.clone(); nc * nc * n];
    let mut d = vec![zero; nc * nc];
    let keys: Vec<String> = sec.entries.keys().cloned().collect();
    for key in keys {
        let (target, idx): (&mut Vec<PolynomialField>, usize) =
            if let Some(r) = coefficient_index(&key, "a", &[nc, nc, n, n]) {
                let i = r.map_err(|e| config_err("operator", &key, e))?;
                (&mut a, ((i[0] * nc + i[1]) * n + i[2]) * n + i[3])
            } else if let Some(r) = coefficient_index(&key, "b", &[nc, nc, n]) {
                let i = r.map_err(|e| config_err("operator", &key, e))?;
                (&mut b, (i[0] * nc + i[1]) * n + i[2])
            } else if let Some(r) = coefficient_index(&key, "c", &[nc, nc, n]) {
                let i = r.map_err(|e| config_err("operator", &key, e))?;
                (&mut c, (i[0] * nc + i[1]) * n + i[2])
            } else if let Some(r) = coefficient_index(&key, "d", &[nc, nc]) {
                let i = r.map_err(|e| config_err("operator", &key, e))?;
                (&mut d, i[0] * nc + i[1])
            } else {
                continue;
            };
        target[idx] = sec.expression(&key, n)?.expect("key present");
    }
    Ok(EllipticOperator::from_coefficients(n, nc, a, b, c, d)?)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        text.parse()
    }

    /// Region at `epsilon` with the configured profile, radii and override.
    pub fn region(&self, epsilon: f64) -> narrowgap::Result<NarrowRegion> {
        Ok(NarrowRegion::with_radii(self.n, epsilon, self.profile.clone(), self.r_solve, self.r_analyze)?
            .allowing_degenerate(self.allow_degenerate))
    }

    pub fn scenario(&self, epsilon: f64) -> narrowgap::Result<Scenario> {
        Ok(Scenario {
            label: self.scenario.clone(),
            op: self.op.clone(),
            region: self.region(epsilon)?,
            data: self.data.clone(),
            nx: self.nx,
            nt: self.nt,
            closure: self.closure,
            solver: self.solver,
            r0: self.r0,
        })
    }
}

impl std::str::FromStr for RunConfig {
    type Err = CliError;

    fn from_str(text: &str) -> Result<Self, CliError> {
        let mut secs = sections(text)?;
        let mut get = |name: &'static str| {
            secs.remove(name).unwrap_or(Section {
                name,
                entries: BTreeMap::new(),
            })
        };

        let mut region = get("region");
        let n: usize = region.parse("n")?.unwrap_or(2);
        if !(n == 2 || n == 3) {
            return Err(config_err("region", "n", format!("{n} not in {{2, 3}}")));
        }
        let dim = n - 1;
        let epsilon = region.number("epsilon")?;
        let epsilons = match region.take("epsilons") {
            None => Vec::new(),
            Some(v) => parse_number_list(&v).map_err(|e| config_err("region", "epsilons", e))?,
        };
        let r_solve = region.number("r_solve")?.unwrap_or(1.0);
        let r_analyze = region.number("r_analyze")?.unwrap_or(0.5);
        let quad = GapProfile::quadratic(dim);
        let h1 = region.expression("h1", dim)?.unwrap_or(quad.h1);
        let h2 = region.expression("h2", dim)?.unwrap_or(quad.h2);
        let mut profile = GapProfile::new(h1, h2)?;
        let kappa0 = region.number("kappa0")?;
        let kappa1 = region.number("kappa1")?;
        if kappa0.is_some() || kappa1.is_some() {
            let (k0, k1) = (kappa0.unwrap_or(profile.kappa0), kappa1.unwrap_or(profile.kappa1));
            profile = profile.with_constants(k0, k1)?;
        }
        region.finish()?;

        let mut opsec = get("operator");
        let kind = opsec.take("kind").unwrap_or_else(|| "laplace".into());
        let op = match kind.as_str() {
            "laplace" => EllipticOperator::laplace(n)?,
            "lame" => {
                let lambda = opsec.number("lame_lambda")?.unwrap_or(1.0);
                let mu = opsec.number("lame_mu")?.unwrap_or(1.0);
                EllipticOperator::lame(n, lambda, mu)?
            }
            "custom" => custom_operator(&mut opsec, n)?,
            other => return Err(config_err("operator", "kind", format!("unknown operator {other:?}"))),
        };
        if kind != "custom" {
            if let Some(nc) = opsec.parse::<usize>("ncomp")? {
                if nc != op.ncomp {
                    return Err(config_err("operator", "ncomp", format!("{kind} has {} components", op.ncomp)));
                }
            }
        }
        opsec.finish()?;

        let mut data = get("data");
        let g_plus = data
            .expression_list("g_plus", dim)?
            .ok_or_else(|| config_err("data", "g_plus", "required"))?;
        let g_minus = data
            .expression_list("g_minus", dim)?
            .ok_or_else(|| config_err("data", "g_minus", "required"))?;
        if g_plus.len() != op.ncomp || g_minus.len() != op.ncomp {
            return Err(CliError::Config(format!(
                "[data] needs {} expressions per side, got {} and {}",
                op.ncomp,
                g_plus.len(),
                g_minus.len()
            )));
        }
        data.finish()?;
        let data = BoundaryData::new(g_plus, g_minus)?;

        let mut solver = get("solver");
        let nx = solver.parse("nx")?.unwrap_or(65);
        let nt = solver.parse("nt")?.unwrap_or(33);
        let defaults = SolverOptions::default();
        let tol = solver.number("tol")?.unwrap_or(defaults.tol);
        if tol <= 0.0 {
            return Err(config_err("solver", "tol", "must be positive"));
        }
        let method = match solver.take("method").as_deref() {
            None | Some("auto") => SolveMethod::Auto,
            Some("direct") => SolveMethod::Direct,
            Some("krylov") => SolveMethod::Krylov,
            Some(other) => return Err(config_err("solver", "method", format!("unknown method {other:?}"))),
        };
        let max_iter = solver.parse("max_iter")?.unwrap_or(defaults.max_iter);
        solver.finish()?;

        let mut analysis = get("analysis");
        let r0 = analysis.number("R0")?.unwrap_or(DEFAULT_R0);
        if !(r0 > 0.0 && r0 < r_analyze) {
            return Err(config_err("analysis", "R0", format!("{r0} not in (0, r_analyze)")));
        }
        let scenario = analysis.take("scenario").unwrap_or_else(|| "default".into());
        let metric = match analysis.take("metric").as_deref() {
            None | Some("center_grad") => SweepMetric::CenterGrad,
            Some("sup_grad") => SweepMetric::SupGrad,
            Some(other) => return Err(config_err("analysis", "metric", format!("unknown metric {other:?}"))),
        };
        let seed = analysis.parse("seed")?.unwrap_or(0);
        let ellipticity_trials = analysis.parse("ellipticity_trials")?.unwrap_or(64);
        analysis.finish()?;

        let mut flags = get("flags");
        let allow_degenerate = flags.boolean("allow_degenerate_geometry")?.unwrap_or(false);
        let closure = match flags.take("lateral_closure").as_deref() {
            None | Some("utilde") => LateralClosure::Utilde,
            Some("constant") => LateralClosure::Constant,
            Some(other) => {
                return Err(config_err("flags", "lateral_closure", format!("unknown closure {other:?}")))
            }
        };
        flags.finish()?;

        Ok(RunConfig {
            n,
            epsilon,
            epsilons,
            r_solve,
            r_analyze,
            profile,
            op,
            data,
            nx,
            nt,
            solver: SolverOptions { tol, method, max_iter },
            r0,
            scenario,
            metric,
            seed,
            ellipticity_trials,
            allow_degenerate,
            closure,
        })
    }
}
