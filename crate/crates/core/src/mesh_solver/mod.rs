//! Mapped-coordinate discretization and linear solvers.
//!
//! Unknowns are interleaved by component: index `(column · nt + t_index) · N + l`,
//! with `t` varying fastest within a column, which keeps the matrix banded
//! for the direct solver in two dimensions.

pub mod assemble;
pub mod grid;
pub mod krylov;
pub mod sparse;

use serde::Serialize;

pub use assemble::{assemble, assemble_with_boundary, boundary_values, dof, LateralClosure, LinearSystem};
pub use grid::{build_grid, ColumnKind, MappedGrid};
pub use sparse::{BandedLu, CsrMatrix};

use crate::auxiliary::BoundaryData;
use crate::error::{Error, Result};
use crate::operators::EllipticOperator;

pub const DEFAULT_TOL: f64 = 1e-10;
/// Largest system sent to the direct solver.
pub const DIRECT_MAX_UNKNOWNS: usize = 200_000;
/// Largest banded-LU work estimate accepted by [`SolveMethod::Auto`].
const DIRECT_MAX_COST: f64 = 4e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Direct,
    Krylov,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub method: SolveMethod,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            method: SolveMethod::Auto,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    /// Nodal values laid out like the unknowns.
    pub values: Vec<f64>,
    pub ncomp: usize,
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

impl SolutionField {
    pub fn value(&self, node: usize, comp: usize) -> f64 {
        self.values[dof(self.ncomp, node, comp)]
    }

    pub fn max_abs_diff(&self, other: &SolutionField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn choose(system: &LinearSystem, method: SolveMethod) -> SolveMethod {
    match method {
        SolveMethod::Auto => {
            let n = system.unknowns();
            let (kl, ku) = system.matrix.bandwidths();
            if n <= DIRECT_MAX_UNKNOWNS && BandedLu::cost(n, kl, ku) <= DIRECT_MAX_COST {
                SolveMethod::Direct
            } else {
                SolveMethod::Krylov
            }
        }
        m => m,
    }
}

/// Solves an assembled system to relative residual `opts.tol`.
pub fn solve_system(system: &LinearSystem, opts: &SolverOptions) -> Result<SolutionField> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {} must be positive", opts.tol)));
    }
    let a = &system.matrix;
    let b = &system.rhs;
    let method = choose(system, opts.method);
    let (x, iterations) = match method {
        SolveMethod::Direct => {
            if system.unknowns() > DIRECT_MAX_UNKNOWNS {
                return Err(Error::InvalidParameter(format!(
                    "{} unknowns exceed the direct-solver limit {DIRECT_MAX_UNKNOWNS}",
                    system.unknowns()
                )));
            }
            let lu = BandedLu::factor(a)?;
            let mut x = lu.solve(b);
            // one step of iterative refinement
            let mut r = vec![0.0; b.len()];
            a.matvec(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            let dx = lu.solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            (x, 1)
        }
        _ => {
            let out = krylov::bicgstab(a, b, None, opts.tol, opts.max_iter)?;
            (out.x, out.iterations)
        }
    };
    let residual = a.relative_residual(&x, b);
    if !(residual <= opts.tol) {
        return Err(Error::Solver {
            msg: format!("{method:?} solve missed the tolerance {:.1e}", opts.tol),
            residual,
            history: vec![residual],
        });
    }
    Ok(SolutionField {
        values: x,
        ncomp: system.ncomp,
        residual,
        iterations,
        method,
    })
}

/// Assembles and solves the homogeneous system with the given data.
pub fn solve(
    op: &EllipticOperator,
    grid: &MappedGrid,
    data: &BoundaryData,
    closure: LateralClosure,
    opts: &SolverOptions,
) -> Result<SolutionField> {
    let sys = assemble(op, grid, data, None, closure)?;
    solve_system(&sys, opts)
}

/// Solution with only component `l` (zero-based) of the data retained.
pub fn solve_component(
    op: &EllipticOperator,
    data: &BoundaryData,
    l: usize,
    grid: &MappedGrid,
    closure: LateralClosure,
    opts: &SolverOptions,
) -> Result<SolutionField> {
    solve(op, grid, &data.component(l)?, closure, opts)
}
