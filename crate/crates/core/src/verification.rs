//! Exact flat-gap solutions, manufactured solutions and convergence studies.

use serde::Serialize;

use crate::auxiliary::ubar_jet;
use crate::error::{Error, Result};
use crate::geometry::NarrowRegion;
use crate::mesh_solver::{assemble_with_boundary, build_grid, dof, solve_system, ColumnKind, MappedGrid, SolutionField, SolverOptions};
use crate::operators::EllipticOperator;
use crate::poly::Jet;

/// `b + (a − b)(x_n + ε/2)/ε` componentwise.
pub fn flat_gap_exact(epsilon: f64, a: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let s = (x[x.len() - 1] + 0.5 * epsilon) / epsilon;
    a.iter().zip(b).map(|(a, b)| b + (a - b) * s).collect()
}

/// A one-variable factor with closed-form derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Factor {
    /// `Σ_k c_k z^k`.
    Poly(Vec<f64>),
    /// `sin(ω z + φ)`.
    Sin { omega: f64, phase: f64 },
}

impl Factor {
    pub fn one() -> Self {
        Factor::Poly(vec![1.0])
    }

    /// Value, first and second derivative at `z`.
    pub fn eval(&self, z: f64) -> [f64; 3] {
        match self {
            Factor::Poly(c) => {
                let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
                for &ck in c.iter().rev() {
                    d2 = d2 * z + 2.0 * d1;
                    d1 = d1 * z + v;
                    v = v * z + ck;
                }
                [v, d1, d2]
            }
            Factor::Sin { omega, phase } => {
                let a = omega * z + phase;
                [a.sin(), omega * a.cos(), -omega * omega * a.sin()]
            }
        }
    }
}

/// `coefficient · Π_α tangential[α](x_α) · vertical(t)` with `t = ū(x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub coefficient: f64,
    pub tangential: Vec<Factor>,
    pub vertical: Factor,
}

fn jet_mul(a: &Jet, b: &Jet, n: usize) -> Jet {
    let mut out = Jet::constant(a.value * b.value);
    for i in 0..n {
        out.grad[i] = a.grad[i] * b.value + a.value * b.grad[i];
        for j in 0..n {
            out.hess[i][j] = a.hess[i][j] * b.value
                + a.grad[i] * b.grad[j]
                + a.grad[j] * b.grad[i]
                + a.value * b.hess[i][j];
        }
    }
    out
}

/// `G ∘ g` from `[G, G', G'']` at `g.value`.
fn jet_compose(g: &Jet, outer: [f64; 3], n: usize) -> Jet {
    let mut out = Jet::constant(outer[0]);
    for i in 0..n {
        out.grad[i] = outer[1] * g.grad[i];
        for j in 0..n {
            out.hess[i][j] = outer[2] * g.grad[i] * g.grad[j] + outer[1] * g.hess[i][j];
        }
    }
    out
}

/// A closed-form `u*` with its exact source `f* = L u*` and traces.
#[derive(Debug, Clone)]
pub struct ManufacturedProblem {
    pub op: EllipticOperator,
    pub region: NarrowRegion,
    /// Terms of each component.
    pub u_star: Vec<Vec<Term>>,
}

impl ManufacturedProblem {
    pub fn new(op: EllipticOperator, region: NarrowRegion, u_star: Vec<Vec<Term>>) -> Result<Self> {
        if u_star.len() != op.ncomp {
            return Err(Error::InvalidParameter(format!(
                "u* has {} components, the operator {}",
                u_star.len(),
                op.ncomp
            )));
        }
        if op.n != region.n {
            return Err(Error::InvalidParameter("operator and region dimensions differ".into()));
        }
        for t in u_star.iter().flatten() {
            if t.tangential.len() != region.dim() {
                return Err(Error::InvalidParameter(format!(
                    "a term has {} tangential factors, expected {}",
                    t.tangential.len(),
                    region.dim()
                )));
            }
            let bad = |f: &Factor| match f {
                Factor::Poly(c) => c.is_empty() || c.iter().any(|v| !v.is_finite()),
                Factor::Sin { omega, phase } => !(omega.is_finite() && phase.is_finite()),
            };
            if !t.coefficient.is_finite() || t.tangential.iter().any(bad) || bad(&t.vertical) {
                return Err(Error::InvalidParameter("unsupported u* factor".into()));
            }
        }
        Ok(ManufacturedProblem { op, region, u_star })
    }

    /// Value, gradient and Hessian of every component at a physical point.
    pub fn u_jet(&self, x: &[f64]) -> Vec<Jet> {
        let n = self.region.n;
        let ub = ubar_jet(&self.region, x);
        self.u_star
            .iter()
            .map(|terms| {
                let mut acc = Jet::default();
                for term in terms {
                    let mut j = jet_compose(&ub, term.vertical.eval(ub.value), n);
                    for (a, f) in term.tangential.iter().enumerate() {
                        let [v, d1, d2] = f.eval(x[a]);
                        let mut fj = Jet::constant(v);
                        fj.grad[a] = d1;
                        fj.hess[a][a] = d2;
                        j = jet_mul(&j, &fj, n);
                    }
                    acc.value += term.coefficient * j.value;
                    for i in 0..n {
                        acc.grad[i] += term.coefficient * j.grad[i];
                        for k in 0..n {
                            acc.hess[i][k] += term.coefficient * j.hess[i][k];
                        }
                    }
                }
                acc
            })
            .collect()
    }

    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        self.u_jet(x).iter().map(|j| j.value).collect()
    }

    /// `f* = L u*` at a physical point.
    pub fn source(&self, x: &[f64]) -> Vec<f64> {
        self.op.apply_jet(x, &self.u_jet(x))
    }

    fn nodal(&self, grid: &MappedGrid, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let nc = self.op.ncomp;
        let mut out = vec![0.0; grid.nodes() * nc];
        for col in 0..grid.ncols() {
            if grid.columns[col].kind == ColumnKind::Outside {
                continue;
            }
            for it in 0..grid.nt {
                let v = f(&grid.physical(col, it));
                for (l, vl) in v.into_iter().enumerate() {
                    out[dof(nc, grid.node(col, it), l)] = vl;
                }
            }
        }
        out
    }

    pub fn exact_nodal(&self, grid: &MappedGrid) -> Vec<f64> {
        self.nodal(grid, |x| self.value(x))
    }

    /// Solves with source `f*` and Dirichlet data from `u*`.
    pub fn solve(&self, grid: &MappedGrid, opts: &SolverOptions) -> Result<SolutionField> {
        let source = self.nodal(grid, |x| self.source(x));
        let region = &self.region;
        let boundary = |xp: &[f64], t: f64, l: usize| {
            let x = region.physical_point(xp, t);
            self.value(&x)[l]
        };
        let sys = assemble_with_boundary(&self.op, grid, &boundary, Some(&source))?;
        solve_system(&sys, opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub nt: usize,
    pub h: f64,
    pub linf: f64,
    pub l2: f64,
    /// L∞ error of each component.
    pub linf_components: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// `log₂(e_k / e_{k+1})` for consecutive grids.
    pub orders_linf: Vec<f64>,
    pub orders_l2: Vec<f64>,
    pub orders_components: Vec<Vec<f64>>,
    /// Whether the L∞ errors decrease on every refinement.
    pub monotone: bool,
}

impl ConvergenceStudy {
    /// Order between the two finest grids.
    pub fn final_order(&self) -> f64 {
        *self.orders_linf.last().expect("at least two grids")
    }
}

/// Solves on each `(nx, nt)` grid and measures errors against `u*`.
///
/// Grids must refine 2:1 in both directions.
pub fn convergence_study(problem: &ManufacturedProblem, grids: &[(usize, usize)], opts: &SolverOptions) -> Result<ConvergenceStudy> {
    if grids.len() < 3 {
        return Err(Error::InvalidParameter("a convergence study needs at least 3 grids".into()));
    }
    for w in grids.windows(2) {
        if w[1].0 - 1 != 2 * (w[0].0 - 1) || w[1].1 - 1 != 2 * (w[0].1 - 1) {
            return Err(Error::InvalidParameter(format!(
                "grids {:?} and {:?} are not a 2:1 refinement",
                w[0], w[1]
            )));
        }
    }
    let nc = problem.op.ncomp;
    let rows = grids
        .iter()
        .map(|&(nx, nt)| {
            let grid = build_grid(&problem.region, nx, nt)?;
            let u = problem.solve(&grid, opts)?;
            let exact = problem.exact_nodal(&grid);
            let mut comp = vec![0.0f64; nc];
            let mut sq = 0.0;
            let mut count = 0usize;
            for col in 0..grid.ncols() {
                if grid.columns[col].kind == ColumnKind::Outside {
                    continue;
                }
                for it in 0..grid.nt {
                    for (l, c) in comp.iter_mut().enumerate() {
                        let k = dof(nc, grid.node(col, it), l);
                        let e = (u.values[k] - exact[k]).abs();
                        *c = c.max(e);
                        sq += e * e;
                        count += 1;
                    }
                }
            }
            Ok(ConvergenceRow {
                nx,
                nt,
                h: grid.h,
                linf: comp.iter().cloned().fold(0.0, f64::max),
                l2: (sq / count as f64).sqrt(),
                linf_components: comp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let order = |a: f64, b: f64| (a / b).log2();
    let orders_linf = rows.windows(2).map(|w| order(w[0].linf, w[1].linf)).collect();
    let orders_l2 = rows.windows(2).map(|w| order(w[0].l2, w[1].l2)).collect();
    let orders_components = (0..nc)
        .map(|l| {
            rows.windows(2)
                .map(|w| order(w[0].linf_components[l], w[1].linf_components[l]))
                .collect()
        })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].linf < w[0].linf);
    Ok(ConvergenceStudy {
        rows,
        orders_linf,
        orders_l2,
        orders_components,
        monotone,
    })
}

/// `u* = sin(x₁)·t` for a scalar operator, or
/// `(sin(x₁)·t, cos(x₁)·t²)` (as shifted sines) for two components.
pub fn default_u_star(ncomp: usize, dim: usize) -> Vec<Vec<Term>> {
    let tang = |f: Factor| {
        let mut v = vec![f];
        v.extend((1..dim).map(|_| Factor::one()));
        v
    };
    let first = Term {
        coefficient: 1.0,
        tangential: tang(Factor::Sin { omega: 1.0, phase: 0.0 }),
        vertical: Factor::Poly(vec![0.0, 1.0]),
    };
    let second = Term {
        coefficient: 1.0,
        tangential: tang(Factor::Sin {
            omega: 1.0,
            phase: std::f64::consts::FRAC_PI_2,
        }),
        vertical: Factor::Poly(vec![0.0, 0.0, 1.0]),
    };
    let mut out = vec![vec![first]];
    if ncomp > 1 {
        out.push(vec![second]);
    }
    for l in 2..ncomp {
        out.push(vec![Term {
            coefficient: 1.0 / l as f64,
            tangential: tang(Factor::Poly(vec![0.0, 1.0])),
            vertical: Factor::Sin { omega: 1.0, phase: 0.0 },
        }]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GapProfile;

    fn quad(eps: f64) -> NarrowRegion {
        NarrowRegion::new(2, eps, GapProfile::quadratic(1)).unwrap()
    }

    /// `L u` by fourth-order central differences of the physical-space
    /// fluxes; shares no code with the jet calculus.
    fn fd_apply(op: &EllipticOperator, u: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
        let n = op.n;
        let nc = op.ncomp;
        let d4 = |f: &dyn Fn(&[f64]) -> f64, x: &[f64], a: usize| {
            let at = |s: f64| {
                let mut y = x.to_vec();
                y[a] += s * h;
                f(&y)
            };
            (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
        };
        let coef = |p: &crate::poly::PolynomialField, y: &[f64]| if p.is_zero() { 0.0 } else { p.eval(y) };
        (0..nc)
            .map(|i| {
                let mut acc = 0.0;
                for al in 0..n {
                    let flux = |y: &[f64]| {
                        let mut s = 0.0;
                        for j in 0..nc {
                            for be in 0..n {
                                let a = coef(&op.a[op.a_index(i, j, al, be)], y);
                                if a != 0.0 {
                                    s += a * d4(&|z: &[f64]| u(z)[j], y, be);
                                }
                            }
                            s += coef(&op.b[op.b_index(i, j, al)], y) * u(y)[j];
                        }
                        s
                    };
                    acc += d4(&flux, x, al);
                    for j in 0..nc {
                        acc += coef(&op.c[op.b_index(i, j, al)], x) * d4(&|z: &[f64]| u(z)[j], x, al);
                    }
                }
                for j in 0..nc {
                    acc += coef(&op.d[i * nc + j], x) * u(x)[j];
                }
                acc
            })
            .collect()
    }

    #[test]
    fn flat_gap_formula() {
        assert_eq!(flat_gap_exact(0.1, &[1.0], &[0.0], &[0.3, 0.0]), vec![0.5]);
        assert_eq!(flat_gap_exact(0.1, &[1.0, 2.0], &[0.0, -1.0], &[0.0, 0.05]), vec![1.0, 2.0]);
        assert_eq!(flat_gap_exact(0.1, &[1.0], &[0.0], &[0.0, -0.05]), vec![0.0]);
    }

    #[test]
    fn factor_derivatives() {
        let p = Factor::Poly(vec![1.0, -2.0, 3.0]);
        assert_eq!(p.eval(2.0), [9.0, 10.0, 6.0]);
        let s = Factor::Sin { omega: 2.0, phase: 0.5 };
        let [v, d1, d2] = s.eval(0.3);
        assert!((v - 1.1f64.sin()).abs() < 1e-15);
        assert!((d1 - 2.0 * 1.1f64.cos()).abs() < 1e-15);
        assert!((d2 + 4.0 * 1.1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn constant_and_linear_u_star_have_zero_source() {
        let r = quad(0.1);
        let op = EllipticOperator::laplace(2).unwrap();
        let c = ManufacturedProblem::new(
            op.clone(),
            r.clone(),
            vec![vec![Term {
                coefficient: 3.0,
                tangential: vec![Factor::one()],
                vertical: Factor::one(),
            }]],
        )
        .unwrap();
        // x1 is linear in physical coordinates
        let l = ManufacturedProblem::new(
            op,
            r,
            vec![vec![Term {
                coefficient: 2.0,
                tangential: vec![Factor::Poly(vec![0.5, 1.0])],
                vertical: Factor::one(),
            }]],
        )
        .unwrap();
        for x in [[0.0, 0.0], [0.3, 0.05], [-0.7, 0.2]] {
            assert_eq!(c.source(&x), vec![0.0]);
            assert!(l.source(&x)[0].abs() < 1e-14);
        }
    }

    #[test]
    fn exact_source_matches_fd_oracle() {
        let r = quad(0.1);
        for op in [EllipticOperator::laplace(2).unwrap(), EllipticOperator::lame(2, 1.0, 1.0).unwrap()] {
            let p = ManufacturedProblem::new(op.clone(), r.clone(), default_u_star(op.ncomp, 1)).unwrap();
            let u = |x: &[f64]| p.value(x);
            for x in [[0.0, 0.0], [0.3, 0.05], [-0.6, 0.1], [0.8, 0.4]] {
                let exact = p.source(&x);
                let e = |h: f64| {
                    fd_apply(&op, &u, &x, h)
                        .iter()
                        .zip(&exact)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                };
                let (e1, e2) = (e(4e-3), e(1e-3));
                let scale = exact.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                assert!(e2 < 1e-6 * scale, "x={x:?} err {e2} source {exact:?}");
                assert!(e2 < e1 || e1 < 1e-9 * scale, "no refinement gain {e1} {e2}");
            }
        }
    }

    #[test]
    fn source_matches_coefficient_free_formula_for_laplace() {
        // Δ(sin(x1) ū) computed by hand: −sin(x1) ū + 2cos(x1) ∂₁ū + sin(x1) Δū
        let r = quad(0.05);
        let p = ManufacturedProblem::new(EllipticOperator::laplace(2).unwrap(), r.clone(), default_u_star(1, 1)).unwrap();
        let x = [0.4, 0.1];
        let ub = ubar_jet(&r, &x);
        let expect = -x[0].sin() * ub.value + 2.0 * x[0].cos() * ub.grad[0] + x[0].sin() * (ub.hess[0][0] + ub.hess[1][1]);
        assert!((p.source(&x)[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn representable_u_star_is_reproduced_to_rounding() {
        // linear in t and constant in x' is in the kernel of the flat-gap stencil
        let flat = NarrowRegion::new(2, 0.1, GapProfile::flat(1)).unwrap().allowing_degenerate(true);
        let u_star = vec![vec![Term {
            coefficient: 1.5,
            tangential: vec![Factor::one()],
            vertical: Factor::Poly(vec![0.25, 1.0]),
        }]];
        let p = ManufacturedProblem::new(EllipticOperator::laplace(2).unwrap(), flat, u_star).unwrap();
        let s = convergence_study(&p, &[(9, 9), (17, 17), (33, 33)], &SolverOptions::default()).unwrap();
        assert!(s.rows.iter().all(|r| r.linf < 1e-10), "{:?}", s.rows);
    }

    #[test]
    fn laplace_mms_is_second_order() {
        let p = ManufacturedProblem::new(EllipticOperator::laplace(2).unwrap(), quad(0.1), default_u_star(1, 1)).unwrap();
        let s = convergence_study(&p, &[(17, 17), (33, 33), (65, 65)], &SolverOptions::default()).unwrap();
        assert!(s.monotone);
        assert!((s.final_order() - 2.0).abs() < 0.2, "{:?}", s.orders_linf);
    }

    #[test]
    fn rejects_bad_studies() {
        let p = ManufacturedProblem::new(EllipticOperator::laplace(2).unwrap(), quad(0.1), default_u_star(1, 1)).unwrap();
        let o = SolverOptions::default();
        assert!(convergence_study(&p, &[(17, 17), (33, 33)], &o).is_err());
        assert!(convergence_study(&p, &[(17, 17), (33, 33), (61, 65)], &o).is_err());
        assert!(ManufacturedProblem::new(EllipticOperator::laplace(2).unwrap(), quad(0.1), default_u_star(2, 1)).is_err());
    }
}
