//! Physical gradients from nodal values on the mapped grid.

use crate::mesh_solver::{dof, ColumnKind, MappedGrid};

/// Per-node `N × n` physical gradient, stored as `((node · N) + l) · n + α`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub n: usize,
    pub ncomp: usize,
    pub values: Vec<f64>,
}

impl GradientField {
    pub fn nodes(&self) -> usize {
        self.values.len() / (self.n * self.ncomp)
    }

    /// `∇u^l` at a node.
    pub fn component(&self, node: usize, l: usize) -> &[f64] {
        let k = (node * self.ncomp + l) * self.n;
        &self.values[k..k + self.n]
    }

    /// Frobenius norm `|∇u|` at a node.
    pub fn norm(&self, node: usize) -> f64 {
        let k = node * self.ncomp * self.n;
        self.values[k..k + self.ncomp * self.n]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean norm over components of `∂_n u`.
    pub fn normal_norm(&self, node: usize) -> f64 {
        (0..self.ncomp)
            .map(|l| self.component(node, l)[self.n - 1].powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.nodes()).map(|i| self.norm(i)).fold(0.0, f64::max)
    }
}

fn usable(grid: &MappedGrid, col: Option<usize>) -> Option<usize> {
    col.filter(|&c| grid.columns[c].kind != ColumnKind::Outside)
}

/// Second-order derivative along a line of three-point stencils.
///
/// `at(k)` returns the value at offset `k ∈ {−2, …, 2}` when available.
fn line_derivative(at: impl Fn(i32) -> Option<f64>, h: f64) -> f64 {
    let c = at(0).expect("centre value");
    match (at(-1), at(1)) {
        (Some(m), Some(p)) => (p - m) / (2.0 * h),
        (None, Some(p)) => match at(2) {
            Some(pp) => (-3.0 * c + 4.0 * p - pp) / (2.0 * h),
            None => (p - c) / h,
        },
        (Some(m), None) => match at(-2) {
            Some(mm) => (3.0 * c - 4.0 * m + mm) / (2.0 * h),
            None => (c - m) / h,
        },
        (None, None) => 0.0,
    }
}

/// Recovers `∇u` from nodal values laid out like the unknowns.
///
/// Central differences in `(s, t)` with three-point one-sided stencils at
/// the ends, mapped to physical derivatives with the exact column metric.
/// Columns outside the solve ball get zero gradients.
pub fn gradient(grid: &MappedGrid, values: &[f64], ncomp: usize) -> GradientField {
    let n = grid.n();
    let dim = grid.dim();
    let nt = grid.nt;
    let mut out = vec![0.0; grid.nodes() * ncomp * n];
    for col in 0..grid.ncols() {
        if grid.columns[col].kind == ColumnKind::Outside {
            continue;
        }
        // neighbouring columns at offsets ±1, ±2 per direction
        let mut nb = [[None; 5]; 2];
        for g in 0..dim {
            nb[g][2] = Some(col);
            let f1 = usable(grid, grid.neighbour(col, g, true));
            let b1 = usable(grid, grid.neighbour(col, g, false));
            nb[g][3] = f1;
            nb[g][1] = b1;
            nb[g][4] = f1.and_then(|c| usable(grid, grid.neighbour(c, g, true)));
            nb[g][0] = b1.and_then(|c| usable(grid, grid.neighbour(c, g, false)));
        }
        let metric = &grid.columns[col].metric;
        for it in 0..nt {
            let node = grid.node(col, it);
            let t = grid.t(it);
            for l in 0..ncomp {
                let val = |c: usize, i: usize| values[dof(ncomp, grid.node(c, i), l)];
                let mut u_s = [0.0; 3];
                for (g, us) in u_s.iter_mut().enumerate().take(dim) {
                    *us = line_derivative(
                        |k| nb[g][(k + 2) as usize].map(|c| val(c, it)),
                        grid.h,
                    );
                }
                let u_t = line_derivative(
                    |k| {
                        let i = it as i32 + k;
                        (0..nt as i32).contains(&i).then(|| val(col, i as usize))
                    },
                    grid.k,
                );
                let g = metric.physical_gradient(t, &u_s, u_t);
                let base = (node * ncomp + l) * n;
                out[base..base + n].copy_from_slice(&g[..n]);
            }
        }
    }
    GradientField {
        n,
        ncomp,
        values: out,
    }
}
