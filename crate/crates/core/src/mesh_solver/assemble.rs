//! Flux-form finite differences of the system in the computational
//! coordinates `(s, t)`.
//!
//! With `P^γ_a = δ δ_{γa}` (tangential `γ`), `P^t_α = −m_α`, `P^t_n = 1`
//! and `m_α = ∂_α h₂ + t ∂_α δ`, the equation becomes
//! `∂_c(Ã^{cd} ∂_d u + B̃^c u) + C̃^d ∂_d u + D̃ u = δ f` where
//! `Ã^{cd} = P^c_a A^{ab} P^d_b / δ`, `B̃^c = P^c_a B^a`,
//! `C̃^d = C^b P^d_b` and `D̃ = δ D`.

use rayon::prelude::*;

use super::grid::{ColumnKind, MappedGrid};
use super::sparse::CsrMatrix;
use crate::auxiliary::BoundaryData;
use crate::error::{Error, Result};
use crate::geometry::ColumnMetric;
use crate::operators::{CoefficientValues, EllipticOperator};

/// Transformed coefficients at one point; indices `[i][j][c][d]` flattened
/// with `n, N ≤ 3`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tilde {
    pub a: [f64; 81],
    pub b: [f64; 27],
    pub c: [f64; 27],
    pub d: [f64; 9],
}

fn ia(nc: usize, n: usize, i: usize, j: usize, c: usize, d: usize) -> usize {
    ((i * nc + j) * n + c) * n + d
}

fn ib(nc: usize, n: usize, i: usize, j: usize, c: usize) -> usize {
    (i * nc + j) * n + c
}

pub(crate) fn tilde_at(
    op: &EllipticOperator,
    metric: &ColumnMetric,
    x_prime: &[f64],
    t: f64,
    scratch: &mut CoefficientValues,
) -> Result<Tilde> {
    let (n, nc) = (op.n, op.ncomp);
    let dim = n - 1;
    let delta = metric.delta.value;
    let mut x = [0.0; 3];
    x[..dim].copy_from_slice(&x_prime[..dim]);
    x[dim] = metric.x_n(t);
    op.eval_coefficients(&x[..n], scratch);
    let mut p = [[0.0; 3]; 3];
    for g in 0..dim {
        p[g][g] = delta;
        p[dim][g] = -metric.slope(g, t);
    }
    p[dim][dim] = 1.0;
    let mut out = Tilde {
        a: [0.0; 81],
        b: [0.0; 27],
        c: [0.0; 27],
        d: [0.0; 9],
    };
    for i in 0..nc {
        for j in 0..nc {
            for c in 0..n {
                for d in 0..n {
                    let mut s = 0.0;
                    for a in 0..n {
                        if p[c][a] == 0.0 {
                            continue;
                        }
                        for b in 0..n {
                            s += p[c][a] * scratch.a[op.a_index(i, j, a, b)] * p[d][b];
                        }
                    }
                    out.a[ia(nc, n, i, j, c, d)] = s / delta;
                }
                let (mut sb, mut sc) = (0.0, 0.0);
                for a in 0..n {
                    sb += p[c][a] * scratch.b[op.b_index(i, j, a)];
                    sc += scratch.c[op.b_index(i, j, a)] * p[c][a];
                }
                out.b[ib(nc, n, i, j, c)] = sb;
                out.c[ib(nc, n, i, j, c)] = sc;
            }
            out.d[i * nc + j] = delta * scratch.d[i * nc + j];
        }
    }
    let finite = out.a[..nc * nc * n * n].iter().all(|v| v.is_finite())
        && out.b.iter().chain(&out.c).chain(&out.d).all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite(format!(
            "coefficients at x' = {:?}, t = {t}",
            &x_prime[..dim]
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LateralClosure {
    /// `u = ũ` on the lateral boundary.
    Utilde,
    /// `u = (g⁺ + g⁻)/2` at lateral nodes strictly between the graphs.
    Constant,
}

#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub ncomp: usize,
    pub dirichlet: Vec<bool>,
}

impl LinearSystem {
    pub fn unknowns(&self) -> usize {
        self.rhs.len()
    }
}

/// Index of component `comp` at node `node`.
pub fn dof(ncomp: usize, node: usize, comp: usize) -> usize {
    node * ncomp + comp
}

/// Boundary values for every Dirichlet node: `(x', t, component) -> value`.
pub type BoundaryFn<'a> = dyn Fn(&[f64], f64, usize) -> f64 + Sync + 'a;

/// Dirichlet values from the trace data and a lateral closure.
pub fn boundary_values(
    data: &BoundaryData,
    closure: LateralClosure,
) -> impl Fn(&[f64], f64, usize) -> f64 + Sync + '_ {
    move |xp: &[f64], t: f64, l: usize| {
        if t == 0.0 {
            data.g_minus[l].eval(xp)
        } else if t == 1.0 {
            data.g_plus[l].eval(xp)
        } else {
            match closure {
                LateralClosure::Constant => data.average(l, xp),
                LateralClosure::Utilde => {
                    // ū = t at a node, so ũ = g⁻ + (g⁺ − g⁻) t there
                    let gm = data.g_minus[l].eval(xp);
                    gm + (data.g_plus[l].eval(xp) - gm) * t
                }
            }
        }
    }
}

/// Assembles `−L_h u = −δ f` with Dirichlet data from `data`.
///
/// `source` is an optional nodal field `f` (physical units), laid out like
/// the unknowns.
pub fn assemble(
    op: &EllipticOperator,
    grid: &MappedGrid,
    data: &BoundaryData,
    source: Option<&[f64]>,
    closure: LateralClosure,
) -> Result<LinearSystem> {
    if data.ncomp() != op.ncomp || data.dim() != grid.dim() {
        return Err(Error::InvalidParameter(
            "boundary data do not match the operator or grid".into(),
        ));
    }
    let bv = boundary_values(data, closure);
    assemble_with_boundary(op, grid, &bv, source)
}

/// Assembly with arbitrary Dirichlet values.
pub fn assemble_with_boundary(
    op: &EllipticOperator,
    grid: &MappedGrid,
    boundary: &BoundaryFn<'_>,
    source: Option<&[f64]>,
) -> Result<LinearSystem> {
    if op.n != grid.n() {
        return Err(Error::InvalidParameter("operator and grid dimensions differ".into()));
    }
    let nc = op.ncomp;
    let n = op.n;
    let dim = n - 1;
    let nodes = grid.nodes();
    let unknowns = nodes * nc;
    if let Some(f) = source {
        if f.len() != unknowns {
            return Err(Error::InvalidParameter(format!(
                "source has {} entries, expected {unknowns}",
                f.len()
            )));
        }
    }

    // Dirichlet values per dof (NaN for unknowns)
    let mut fixed = vec![f64::NAN; unknowns];
    let mut dirichlet = vec![false; unknowns];
    for col in 0..grid.ncols() {
        for it in 0..grid.nt {
            if !grid.is_dirichlet(col, it) {
                continue;
            }
            let node = grid.node(col, it);
            for l in 0..nc {
                let v = if grid.columns[col].kind == ColumnKind::Outside {
                    0.0
                } else {
                    boundary(grid.x_prime(col), grid.t(it), l)
                };
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("boundary value at node {node}")));
                }
                fixed[dof(nc, node, l)] = v;
                dirichlet[dof(nc, node, l)] = true;
            }
        }
    }

    let (h, k) = (grid.h, grid.k);
    let spacing = |c: usize| if c < dim { h } else { k };

    let rows: Vec<Result<(Vec<Vec<(usize, f64)>>, Vec<f64>)>> = (0..nodes)
        .into_par_iter()
        .map(|node| {
            let (col, it) = (node / grid.nt, node % grid.nt);
            if grid.is_dirichlet(col, it) {
                let rows = (0..nc).map(|l| vec![(dof(nc, node, l), 1.0)]).collect();
                let rhs = (0..nc).map(|l| fixed[dof(nc, node, l)]).collect();
                return Ok((rows, rhs));
            }
            let mut scratch = CoefficientValues::default();
            let cm = &grid.columns[col].metric;
            let xp = grid.x_prime(col);
            let t = grid.t(it);
            // neighbour node along direction c
            let step = |nd: usize, c: usize, fwd: bool| -> usize {
                let (cl, i) = (nd / grid.nt, nd % grid.nt);
                if c < dim {
                    let nb = grid.neighbour(cl, c, fwd).expect("interior column has neighbours");
                    grid.node(nb, i)
                } else if fwd {
                    nd + 1
                } else {
                    nd - 1
                }
            };
            let tilde_node = |nd: usize, scratch: &mut CoefficientValues| -> Result<Tilde> {
                let (cl, i) = (nd / grid.nt, nd % grid.nt);
                tilde_at(op, &grid.columns[cl].metric, grid.x_prime(cl), grid.t(i), scratch)
            };
            let here = tilde_node(node, &mut scratch)?;
            let mut plus = Vec::with_capacity(n);
            let mut minus = Vec::with_capacity(n);
            let mut half_plus = Vec::with_capacity(n);
            let mut half_minus = Vec::with_capacity(n);
            for c in 0..n {
                let (np, nm) = (step(node, c, true), step(node, c, false));
                plus.push((np, tilde_node(np, &mut scratch)?));
                minus.push((nm, tilde_node(nm, &mut scratch)?));
                if c < dim {
                    let mut xph = [0.0; 3];
                    xph[..dim].copy_from_slice(xp);
                    xph[c] += 0.5 * h;
                    let mp = grid.half_metrics[c][col].expect("half metric");
                    half_plus.push(tilde_at(op, &mp, &xph[..dim], t, &mut scratch)?);
                    let left = grid.neighbour(col, c, false).expect("left neighbour");
                    let mm = grid.half_metrics[c][left].expect("half metric");
                    xph[c] -= h;
                    half_minus.push(tilde_at(op, &mm, &xph[..dim], t, &mut scratch)?);
                } else {
                    half_plus.push(tilde_at(op, cm, xp, t + 0.5 * k, &mut scratch)?);
                    half_minus.push(tilde_at(op, cm, xp, t - 0.5 * k, &mut scratch)?);
                }
            }
            let mut rows = Vec::with_capacity(nc);
            let mut rhs = Vec::with_capacity(nc);
            for i in 0..nc {
                // entries of L_h (negated at the end)
                let mut e: Vec<(usize, f64)> = Vec::with_capacity(9 * nc * 3);
                for j in 0..nc {
                    let me = dof(nc, node, j);
                    let mut diag = 0.0;
                    for c in 0..n {
                        let hc2 = spacing(c) * spacing(c);
                        let ap = half_plus[c].a[ia(nc, n, i, j, c, c)] / hc2;
                        let am = half_minus[c].a[ia(nc, n, i, j, c, c)] / hc2;
                        e.push((dof(nc, plus[c].0, j), ap));
                        e.push((dof(nc, minus[c].0, j), am));
                        diag -= ap + am;
                        for d in 0..n {
                            if d == c {
                                continue;
                            }
                            let w = 1.0 / (4.0 * spacing(c) * spacing(d));
                            let ap = plus[c].1.a[ia(nc, n, i, j, c, d)] * w;
                            let am = minus[c].1.a[ia(nc, n, i, j, c, d)] * w;
                            // pushed even when zero so the pattern stays symmetric
                            e.push((dof(nc, step(plus[c].0, d, true), j), ap));
                            e.push((dof(nc, step(plus[c].0, d, false), j), -ap));
                            e.push((dof(nc, step(minus[c].0, d, true), j), -am));
                            e.push((dof(nc, step(minus[c].0, d, false), j), am));
                        }
                        let w = 1.0 / (2.0 * spacing(c));
                        let bp = plus[c].1.b[ib(nc, n, i, j, c)];
                        let bm = minus[c].1.b[ib(nc, n, i, j, c)];
                        let cc = here.c[ib(nc, n, i, j, c)];
                        e.push((dof(nc, plus[c].0, j), (bp + cc) * w));
                        e.push((dof(nc, minus[c].0, j), -(bm + cc) * w));
                    }
                    diag += here.d[i * nc + j];
                    e.push((me, diag));
                }
                let mut b = -cm.delta.value * source.map(|f| f[dof(nc, node, i)]).unwrap_or(0.0);
                let mut row = Vec::with_capacity(e.len());
                for (c, v) in e {
                    if dirichlet[c] {
                        b += v * fixed[c];
                    } else {
                        row.push((c, -v));
                    }
                }
                // keep the diagonal present even when it cancels
                row.push((dof(nc, node, i), 0.0));
                rows.push(row);
                rhs.push(b);
            }
            Ok((rows, rhs))
        })
        .collect();

    let mut all_rows = Vec::with_capacity(unknowns);
    let mut rhs = Vec::with_capacity(unknowns);
    for r in rows {
        let (rs, bs) = r?;
        all_rows.extend(rs);
        rhs.extend(bs);
    }
    Ok(LinearSystem {
        matrix: CsrMatrix::from_rows(all_rows),
        rhs,
        ncomp: nc,
        dirichlet,
    })
}
