//! Empirical gradient bounds, lemma-level energies and blow-up rate fits.

pub mod energy;
pub mod gradient;
pub mod rate;

use rayon::prelude::*;
use serde::Serialize;

pub use energy::{energy, l2_norm_squared, local_energy_profile, EnergySet};
pub use gradient::{gradient, GradientField};
pub use rate::RateFit;

use crate::auxiliary::{utilde_all, BoundaryData};
use crate::error::{Error, Result};
use crate::geometry::{norm, NarrowRegion};
use crate::mesh_solver::{self, build_grid, dof, ColumnKind, LateralClosure, MappedGrid, SolutionField, SolverOptions};
use crate::operators::EllipticOperator;

/// Default inner radius for the upper-bound constant.
pub const DEFAULT_R0: f64 = 0.25;
/// Largest coarse/fine disagreement accepted by the Richardson check.
pub const RICHARDSON_TOL: f64 = 0.02;

/// `num / den` with `0/0 = 0` and `x/0 = ∞`.
fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaConstants {
    /// `∫_{Ω_{1/2}}|∇w|² / (‖w‖² + ‖g⁺‖²_{C²} + ‖g⁻‖²_{C²})`.
    pub k213: f64,
    /// `F(δ(0)) / (ε^{n−1}[|Δg(0)|² + ε(‖g⁺‖² + ‖g⁻‖² + ‖w‖²)])`.
    pub k219: f64,
    /// The outer analogue at `|x0'| = 2√ε`; `None` outside `Ω_{r_analyze}`.
    pub k220: Option<f64>,
    /// Pointwise factor for `|x'| ≤ √ε`.
    pub k225: f64,
    /// Pointwise factor for `√ε < |x'| < R0`; `None` when that range is empty.
    pub k226: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitSummary {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl From<&RateFit> for FitSummary {
    fn from(f: &RateFit) -> Self {
        FitSummary {
            slope: f.slope,
            intercept: f.intercept,
            r2: f.r2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSize {
    pub nx: usize,
    pub nt: usize,
}

/// Quantities that are not part of the serialized report.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    /// `|∇u(0', mid)|`.
    pub center_grad: f64,
    /// `max (ε+|x'|²)|∂_n u(x', mid)| / |Δg(x')|` over `|x'| ≤ R0`.
    pub normal_profile_max: Option<f64>,
    pub u_l2: f64,
    pub w_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub epsilon: f64,
    pub sup_grad: f64,
    #[serde(rename = "C_emp")]
    pub c_emp: f64,
    pub c_low: Option<f64>,
    pub energy_half: f64,
    #[serde(rename = "F_delta0")]
    pub f_delta0: f64,
    pub lemma_constants: LemmaConstants,
    pub rate_fit: Option<FitSummary>,
    pub grid: GridSize,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub scenario: String,
    #[serde(skip)]
    pub diagnostics: Diagnostics,
}

/// Nodal values of `ũ`.
pub fn utilde_nodal(grid: &MappedGrid, data: &BoundaryData) -> Vec<f64> {
    let nc = data.ncomp();
    let mut v = vec![0.0; grid.nodes() * nc];
    for col in 0..grid.ncols() {
        if grid.columns[col].kind == ColumnKind::Outside {
            continue;
        }
        for it in 0..grid.nt {
            let x = grid.physical(col, it);
            for (l, j) in utilde_all(&grid.region, data, &x).iter().enumerate() {
                v[dof(nc, grid.node(col, it), l)] = j.value;
            }
        }
    }
    v
}

/// `max |∇u(0', x_n)|` over the centre column.
pub fn sup_grad(grid: &MappedGrid, grad: &GradientField) -> f64 {
    let col = grid.centre_column();
    (0..grid.nt)
        .map(|it| grad.norm(grid.node(col, it)))
        .fold(0.0, f64::max)
}

pub fn center_grad(grid: &MappedGrid, grad: &GradientField) -> f64 {
    grad.norm(grid.node(grid.centre_column(), grid.mid_t()))
}

/// Smallest `C` with `|∇u| ≤ C[|Δg|/(ε+|x'|²) + ‖g⁺‖_{C²} + ‖g⁻‖_{C²} + ‖u‖_{L²}]`
/// at every node with `|x'| ≤ R0`.
pub fn sup_bound_constant(grid: &MappedGrid, grad: &GradientField, data: &BoundaryData, u_l2: f64, r0: f64) -> f64 {
    let eps = grid.region.epsilon;
    let budget = data.c2_budget() + u_l2;
    let mut c: f64 = 0.0;
    for col in 0..grid.ncols() {
        let xp = grid.x_prime(col);
        let r = norm(xp);
        if r > r0 * (1.0 + 1e-12) || grid.columns[col].kind == ColumnKind::Outside {
            continue;
        }
        let den = data.mismatch(xp) / (eps + r * r) + budget;
        for it in 0..grid.nt {
            c = c.max(ratio(grad.norm(grid.node(col, it)), den));
        }
    }
    c
}

/// `min |∇u(0', x_n)| ε / max_l|Δg_l(0')|` over interior centerline nodes;
/// `None` without a mismatch at the origin.
pub fn centerline_lower_constant(grid: &MappedGrid, grad: &GradientField, data: &BoundaryData) -> Option<f64> {
    let zero = vec![0.0; grid.dim()];
    let m = data.max_component_mismatch(&zero);
    if m <= 1e-14 * (1.0 + data.c2_budget()) {
        return None;
    }
    let col = grid.centre_column();
    let eps = grid.region.epsilon;
    (1..grid.nt - 1)
        .map(|it| grad.norm(grid.node(col, it)) * eps / m)
        .reduce(f64::min)
}

/// `max (ε+|x'|²)|∂_n u(x', mid)| / |Δg(x')|` over columns with `|x'| ≤ R0`.
pub fn normal_profile_max(grid: &MappedGrid, grad: &GradientField, data: &BoundaryData, r0: f64) -> Option<f64> {
    let eps = grid.region.epsilon;
    let scale = 1e-12 * (1.0 + data.c2_budget());
    let mut best: Option<f64> = None;
    for col in 0..grid.ncols() {
        let xp = grid.x_prime(col);
        let r = norm(xp);
        let mis = data.mismatch(xp);
        if r > r0 * (1.0 + 1e-12) || mis <= scale || grid.columns[col].kind == ColumnKind::Outside {
            continue;
        }
        let v = (eps + r * r) * grad.normal_norm(grid.node(col, grid.mid_t())) / mis;
        best = Some(best.map_or(v, |b: f64| b.max(v)));
    }
    best
}

/// Pointwise factors `(m_inner, m_outer)` for `∇w`.
///
/// `m_inner = max_{|x'|≤√ε} |∇w| / (|Δg|/√ε + B)` and
/// `m_outer = max_{√ε<|x'|<R0} |∇w| / (|Δg|/|x'| + B)` with
/// `B = ‖g⁺‖_{C²} + ‖g⁻‖_{C²} + ‖w‖_{L²}`.
pub fn pointwise_w_check(
    grid: &MappedGrid,
    grad_w: &GradientField,
    data: &BoundaryData,
    w_l2: f64,
    r0: f64,
) -> (f64, Option<f64>) {
    let se = grid.region.epsilon.sqrt();
    let budget = data.c2_budget() + w_l2;
    let mut inner: f64 = 0.0;
    let mut outer: Option<f64> = None;
    for col in 0..grid.ncols() {
        if grid.columns[col].kind == ColumnKind::Outside {
            continue;
        }
        let xp = grid.x_prime(col);
        let r = norm(xp);
        let mis = data.mismatch(xp);
        let colmax = (0..grid.nt)
            .map(|it| grad_w.norm(grid.node(col, it)))
            .fold(0.0, f64::max);
        if r <= se {
            inner = inner.max(ratio(colmax, mis / se + budget));
        } else if r < r0 {
            let v = ratio(colmax, mis / r + budget);
            outer = Some(outer.map_or(v, |o: f64| o.max(v)));
        }
    }
    (inner, outer)
}

/// A solved field with its derived quantities.
#[derive(Debug, Clone)]
pub struct SolvedCase {
    pub grid: MappedGrid,
    pub u: SolutionField,
    pub grad_u: GradientField,
    pub w: Vec<f64>,
    pub grad_w: GradientField,
}

impl SolvedCase {
    pub fn new(grid: MappedGrid, u: SolutionField, data: &BoundaryData) -> Self {
        let nc = u.ncomp;
        let grad_u = gradient(&grid, &u.values, nc);
        let ut = utilde_nodal(&grid, data);
        let w: Vec<f64> = u.values.iter().zip(&ut).map(|(a, b)| a - b).collect();
        let grad_w = gradient(&grid, &w, nc);
        SolvedCase {
            grid,
            u,
            grad_u,
            w,
            grad_w,
        }
    }
}

/// Computes every constant of the report from a solved case.
pub fn bound_report(case: &SolvedCase, data: &BoundaryData, r0: f64, scenario: &str) -> Result<BoundReport> {
    let grid = &case.grid;
    let region = &grid.region;
    let nc = case.u.ncomp;
    let eps = region.epsilon;
    let n = region.n as i32;
    let dim = grid.dim();
    let u_l2 = l2_norm_squared(grid, &case.u.values, nc)?.sqrt();
    let w_l2sq = l2_norm_squared(grid, &case.w, nc)?;
    let w_l2 = w_l2sq.sqrt();
    let g2 = data.plus_norms.c2.powi(2) + data.minus_norms.c2.powi(2);

    let energy_half = energy(grid, &case.grad_w, &EnergySet::Half);
    let zero = vec![0.0; dim];
    let w0 = region.window(&zero, None)?;
    let f_delta0 = energy(grid, &case.grad_w, &EnergySet::Window(w0));
    let mis0 = data.mismatch(&zero);
    let k213 = ratio(energy_half, w_l2sq + g2);
    let k219 = ratio(f_delta0, eps.powi(n - 1) * (mis0 * mis0 + eps * (g2 + w_l2sq)));
    let k220 = {
        let r = 2.0 * eps.sqrt();
        if r < region.r_analyze {
            let mut x0 = vec![0.0; dim];
            x0[0] = r;
            let win = region.window(&x0, None)?;
            let f = energy(grid, &case.grad_w, &EnergySet::Window(win));
            let mis = data.mismatch(&x0);
            Some(ratio(f, r.powi(2 * (n - 1)) * (mis * mis + r * r * (g2 + w_l2sq))))
        } else {
            None
        }
    };
    let (k225, k226) = pointwise_w_check(grid, &case.grad_w, data, w_l2, r0);
    let report = BoundReport {
        epsilon: eps,
        sup_grad: sup_grad(grid, &case.grad_u),
        c_emp: sup_bound_constant(grid, &case.grad_u, data, u_l2, r0),
        c_low: centerline_lower_constant(grid, &case.grad_u, data),
        energy_half,
        f_delta0,
        lemma_constants: LemmaConstants {
            k213,
            k219,
            k220,
            k225,
            k226,
        },
        rate_fit: None,
        grid: GridSize {
            nx: grid.nx,
            nt: grid.nt,
        },
        r0,
        scenario: scenario.to_string(),
        diagnostics: Diagnostics {
            center_grad: center_grad(grid, &case.grad_u),
            normal_profile_max: normal_profile_max(grid, &case.grad_u, data, r0),
            u_l2,
            w_l2,
        },
    };
    let finite = [report.sup_grad, report.c_emp, energy_half, f_delta0, k213, k219, k225]
        .iter()
        .chain(report.c_low.iter())
        .chain(k220.iter())
        .chain(k226.iter())
        .all(|v| v.is_finite() && *v >= 0.0);
    if !finite {
        return Err(Error::NonFinite(format!("bound report at ε = {eps}")));
    }
    Ok(report)
}

/// One problem instance: operator, geometry, data and discretization.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub op: EllipticOperator,
    pub region: NarrowRegion,
    pub data: BoundaryData,
    pub nx: usize,
    pub nt: usize,
    pub closure: LateralClosure,
    pub solver: SolverOptions,
    pub r0: f64,
}

impl Scenario {
    pub fn solve_on(&self, region: &NarrowRegion, nx: usize, nt: usize) -> Result<SolvedCase> {
        let grid = build_grid(region, nx, nt)?;
        let u = mesh_solver::solve(&self.op, &grid, &self.data, self.closure, &self.solver)?;
        Ok(SolvedCase::new(grid, u, &self.data))
    }

    pub fn solve(&self) -> Result<SolvedCase> {
        self.solve_on(&self.region, self.nx, self.nt)
    }

    pub fn report(&self) -> Result<(SolvedCase, BoundReport)> {
        let case = self.solve()?;
        let rep = bound_report(&case, &self.data, self.r0, &self.label)?;
        Ok((case, rep))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    CenterGrad,
    SupGrad,
}

impl SweepMetric {
    pub fn of(self, report: &BoundReport) -> f64 {
        match self {
            SweepMetric::CenterGrad => report.diagnostics.center_grad,
            SweepMetric::SupGrad => report.sup_grad,
        }
    }
}

/// Tangential size at `ε` for a sweep whose finest member uses `nx_max`:
/// `nx ∝ 1/√ε`, kept `≡ 1 (mod 4)` so the half grid is also odd.
pub fn sweep_nx(nx_max: usize, epsilon: f64, eps_min: f64) -> usize {
    let quarter = ((nx_max - 1) / 4) as f64;
    let q = (quarter * (eps_min / epsilon).sqrt()).ceil() as usize;
    (4 * q + 1).max(9)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RichardsonCheck {
    pub nx_coarse: usize,
    pub nt_coarse: usize,
    pub fine: f64,
    pub coarse: f64,
    pub rel_diff: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct SweepMember {
    pub report: BoundReport,
    pub metric: f64,
    pub richardson: RichardsonCheck,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub members: Vec<SweepMember>,
    pub fit: RateFit,
}

impl SweepResult {
    pub fn richardson_passed(&self) -> bool {
        self.members.iter().all(|m| m.richardson.passed)
    }
}

/// Solves the scenario for each `ε` (strictly decreasing), checks each
/// member against the half-resolution grid, and fits the metric's rate.
pub fn sweep_and_fit(scenario: &Scenario, epsilons: &[f64], metric: SweepMetric) -> Result<SweepResult> {
    if epsilons.len() < 3 {
        return Err(Error::InvalidParameter("a sweep needs at least 3 epsilons".into()));
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("sweep epsilons must be strictly decreasing".into()));
    }
    let eps_min = *epsilons.last().unwrap();
    let nt_coarse = (scenario.nt - 1) / 2 + 1;
    if nt_coarse < 9 || nt_coarse % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "nt = {} has no odd half grid with at least 9 nodes",
            scenario.nt
        )));
    }
    let members: Vec<Result<SweepMember>> = epsilons
        .par_iter()
        .map(|&eps| {
            let region = scenario.region.with_epsilon(eps)?;
            let nx = sweep_nx(scenario.nx, eps, eps_min);
            let nx_coarse = (nx - 1) / 2 + 1;
            if nx_coarse < 9 {
                return Err(Error::InvalidParameter(format!("nx = {nx} is too small for the half grid")));
            }
            let fine = scenario.solve_on(&region, nx, scenario.nt)?;
            let report = bound_report(&fine, &scenario.data, scenario.r0, &scenario.label)?;
            let coarse_case = scenario.solve_on(&region, nx_coarse, nt_coarse)?;
            let coarse = bound_report(&coarse_case, &scenario.data, scenario.r0, &scenario.label)?;
            let (f, c) = (metric.of(&report), metric.of(&coarse));
            let rel_diff = ratio((f - c).abs(), f.abs());
            Ok(SweepMember {
                metric: f,
                richardson: RichardsonCheck {
                    nx_coarse,
                    nt_coarse,
                    fine: f,
                    coarse: c,
                    rel_diff,
                    passed: rel_diff <= RICHARDSON_TOL,
                },
                report,
            })
        })
        .collect();
    let mut members = members.into_iter().collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = members.iter().map(|m| (m.report.epsilon, m.metric)).collect();
    let fit = RateFit::fit(&pts)?;
    let summary = FitSummary::from(&fit);
    for m in &mut members {
        m.report.rate_fit = Some(summary);
    }
    Ok(SweepResult { members, fit })
}

/// `‖u − Σ_l v_l‖_∞` where `v_l` keeps only component `l` of the data.
pub fn superposition_check(
    op: &EllipticOperator,
    grid: &MappedGrid,
    data: &BoundaryData,
    closure: LateralClosure,
    opts: &SolverOptions,
) -> Result<f64> {
    let full = mesh_solver::solve(op, grid, data, closure, opts)?;
    let parts = (0..data.ncomp())
        .into_par_iter()
        .map(|l| mesh_solver::solve_component(op, data, l, grid, closure, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = vec![0.0; full.values.len()];
    for p in &parts {
        for (s, v) in sum.iter_mut().zip(&p.values) {
            *s += v;
        }
    }
    Ok(full
        .values
        .iter()
        .zip(&sum)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GapProfile;
    use crate::poly::parse_expression;

    fn scenario(region: NarrowRegion, op: EllipticOperator, data: BoundaryData, nx: usize, nt: usize) -> Scenario {
        Scenario {
            label: "test".into(),
            op,
            region,
            data,
            nx,
            nt,
            closure: LateralClosure::Utilde,
            solver: SolverOptions::default(),
            r0: DEFAULT_R0,
        }
    }

    fn flat(eps: f64) -> NarrowRegion {
        NarrowRegion::new(2, eps, GapProfile::flat(1))
            .unwrap()
            .allowing_degenerate(true)
    }

    #[test]
    fn flat_gap_constants() {
        let eps = 0.05;
        let d = BoundaryData::constant(1, &[1.0], &[0.0]).unwrap();
        let sc = scenario(flat(eps), EllipticOperator::laplace(2).unwrap(), d, 33, 17);
        let (case, rep) = sc.report().unwrap();
        for node in 0..case.grid.nodes() {
            let g = case.grad_u.component(node, 0);
            assert!((g[1] - 1.0 / eps).abs() < 1e-8 && g[0].abs() < 1e-8);
        }
        assert!((rep.sup_grad - 1.0 / eps).abs() < 1e-8);
        assert!((rep.c_low.unwrap() - 1.0).abs() < 1e-10);
        assert!(rep.energy_half < 1e-16 && rep.f_delta0 < 1e-16);
        assert!(rep.lemma_constants.k225 < 1e-8);
    }

    #[test]
    fn matched_constant_data_gives_zero_gradient() {
        let r = NarrowRegion::new(2, 0.05, GapProfile::quadratic(1)).unwrap();
        let d = BoundaryData::constant(1, &[2.5], &[2.5]).unwrap();
        let sc = scenario(r, EllipticOperator::laplace(2).unwrap(), d, 17, 9);
        let (case, rep) = sc.report().unwrap();
        assert!(case.u.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert!(rep.sup_grad < 1e-9 && rep.c_emp < 1e-9);
        assert_eq!(rep.c_low, None);
    }

    #[test]
    fn zero_data_gives_zero_constant() {
        let r = NarrowRegion::new(2, 0.1, GapProfile::quadratic(1)).unwrap();
        let d = BoundaryData::constant(1, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        let sc = scenario(r, EllipticOperator::lame(2, 1.0, 1.0).unwrap(), d, 17, 9);
        let (_, rep) = sc.report().unwrap();
        assert_eq!(rep.c_emp, 0.0);
        assert_eq!(rep.sup_grad, 0.0);
    }

    #[test]
    fn scaling_data_scales_gradients_linearly() {
        let r = NarrowRegion::new(2, 0.05, GapProfile::quadratic(1)).unwrap();
        let d = BoundaryData::new(
            vec![parse_expression("1 + x1", 1).unwrap()],
            vec![parse_expression("x1^2", 1).unwrap()],
        )
        .unwrap();
        let op = EllipticOperator::laplace(2).unwrap();
        let a = scenario(r.clone(), op.clone(), d.clone(), 17, 9).report().unwrap().1;
        let b = scenario(r, op, d.scaled(-3.0).unwrap(), 17, 9).report().unwrap().1;
        assert!((b.sup_grad - 3.0 * a.sup_grad).abs() < 1e-9 * b.sup_grad);
        assert!((b.diagnostics.center_grad - 3.0 * a.diagnostics.center_grad).abs() < 1e-9 * b.sup_grad);
    }

    #[test]
    fn sweep_grid_sizes() {
        assert_eq!(sweep_nx(129, 0.0125, 0.0125), 129);
        assert_eq!(sweep_nx(129, 0.05, 0.0125), 65);
        assert_eq!(sweep_nx(129, 0.1, 0.0125), 49);
        for e in [0.1, 0.07, 0.03] {
            assert_eq!(sweep_nx(65, e, 0.01) % 4, 1);
        }
    }

    #[test]
    fn superposition_is_exact_for_lame() {
        let r = NarrowRegion::new(2, 0.05, GapProfile::quadratic(1)).unwrap();
        let g = build_grid(&r, 33, 17).unwrap();
        let d = BoundaryData::new(
            vec![parse_expression("1 + x1", 1).unwrap(), parse_expression("x1^2 - 0.3", 1).unwrap()],
            vec![parse_expression("0.2", 1).unwrap(), parse_expression("-x1", 1).unwrap()],
        )
        .unwrap();
        let op = EllipticOperator::lame(2, 1.0, 1.0).unwrap();
        let opts = SolverOptions::default();
        let disc = superposition_check(&op, &g, &d, LateralClosure::Utilde, &opts).unwrap();
        assert!(disc <= 10.0 * opts.tol, "{disc}");
    }

    #[test]
    fn report_serializes_with_exact_keys() {
        let d = BoundaryData::constant(1, &[1.0], &[0.0]).unwrap();
        let sc = scenario(flat(0.1), EllipticOperator::laplace(2).unwrap(), d, 17, 9);
        let rep = sc.report().unwrap().1;
        let v = serde_json::to_value(&rep).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "C_emp", "F_delta0", "R0", "c_low", "energy_half", "epsilon", "grid", "lemma_constants", "rate_fit",
                "scenario", "sup_grad"
            ]
        );
        let mut lk: Vec<_> = v["lemma_constants"].as_object().unwrap().keys().cloned().collect();
        lk.sort();
        assert_eq!(lk, ["k213", "k219", "k220", "k225", "k226"]);
    }
}
