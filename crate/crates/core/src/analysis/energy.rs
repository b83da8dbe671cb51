//! Quadrature over sets of columns with the mapping Jacobian `δ(x')`.
//!
//! Column integrals `∫₀¹ ρ δ dt` use the trapezoid rule; the tangential
//! integral is exact for the piecewise-linear interpolant when `n = 2` and
//! uses sub-cell midpoints of the bilinear interpolant when `n = 3`.

use super::gradient::GradientField;
use crate::error::{Error, Result};
use crate::geometry::{norm, LocalWindow};
use crate::mesh_solver::{dof, ColumnKind, MappedGrid};

/// Midpoint subdivisions per cell side in two tangential dimensions.
const SUBCELLS: usize = 8;

/// `∫₀¹ ρ(col, t) δ(col) dt` for every column.
pub fn column_integrals(grid: &MappedGrid, density: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..grid.ncols())
        .map(|col| {
            if grid.columns[col].kind == ColumnKind::Outside {
                return 0.0;
            }
            let mut s = 0.0;
            for it in 0..grid.nt {
                let w = if it == 0 || it + 1 == grid.nt { 0.5 } else { 1.0 };
                s += w * density(grid.node(col, it));
            }
            s * grid.k * grid.columns[col].metric.delta.value
        })
        .collect()
}

/// Integral of interpolated column values over
/// `{|x' − centre| < radius} ∩ {|x'| < cut}`.
pub fn integrate_columns(grid: &MappedGrid, col_values: &[f64], centre: &[f64], radius: f64, cut: f64) -> f64 {
    let nx = grid.nx;
    let xs: Vec<f64> = (0..nx).map(|i| grid.columns[i].x_prime[0]).collect();
    if grid.dim() == 1 {
        let a = (centre[0] - radius).max(-cut);
        let b = (centre[0] + radius).min(cut);
        if a >= b {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..nx - 1 {
            let (x0, x1) = (xs[i], xs[i + 1]);
            let lo = a.max(x0);
            let hi = b.min(x1);
            if lo >= hi {
                continue;
            }
            let lerp = |x: f64| col_values[i] + (col_values[i + 1] - col_values[i]) * (x - x0) / (x1 - x0);
            total += 0.5 * (lerp(lo) + lerp(hi)) * (hi - lo);
        }
        return total;
    }
    let h = grid.h;
    let sub = h / SUBCELLS as f64;
    let mut total = 0.0;
    for j in 0..nx - 1 {
        for i in 0..nx - 1 {
            let corners = [
                grid.column_index(&[i, j]),
                grid.column_index(&[i + 1, j]),
                grid.column_index(&[i, j + 1]),
                grid.column_index(&[i + 1, j + 1]),
            ];
            let (x0, y0) = (xs[i], xs[j]);
            // skip cells that cannot meet the set
            let mid = [x0 + 0.5 * h, y0 + 0.5 * h];
            let reach = h * std::f64::consts::FRAC_1_SQRT_2;
            let dc = norm(&[mid[0] - centre[0], mid[1] - centre[1]]);
            if dc > radius + reach || norm(&mid) > cut + reach {
                continue;
            }
            let v = corners.map(|c| col_values[c]);
            // corners outside the solve ball carry no data
            let live = corners.map(|c| grid.columns[c].kind != ColumnKind::Outside);
            if !live.iter().any(|&l| l) {
                continue;
            }
            for q in 0..SUBCELLS {
                for p in 0..SUBCELLS {
                    let a = (p as f64 + 0.5) / SUBCELLS as f64;
                    let b = (q as f64 + 0.5) / SUBCELLS as f64;
                    let x = [x0 + a * h, y0 + b * h];
                    if norm(&[x[0] - centre[0], x[1] - centre[1]]) >= radius || norm(&x) >= cut {
                        continue;
                    }
                    let wts = [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b];
                    let (mut num, mut den) = (0.0, 0.0);
                    for k in 0..4 {
                        if live[k] {
                            num += wts[k] * v[k];
                            den += wts[k];
                        }
                    }
                    total += num / den * sub * sub;
                }
            }
        }
    }
    total
}

/// Where an energy integral is taken.
#[derive(Debug, Clone, PartialEq)]
pub enum EnergySet {
    /// `Ω_{r_analyze}`.
    Half,
    /// A local window, cut to `Ω_{r_analyze}`.
    Window(LocalWindow),
}

/// `∫ |∇w|²` over the requested set.
pub fn energy(grid: &MappedGrid, grad: &GradientField, set: &EnergySet) -> f64 {
    let cols = column_integrals(grid, |node| grad.norm(node).powi(2));
    let cut = grid.region.r_analyze;
    match set {
        EnergySet::Half => integrate_columns(grid, &cols, &vec![0.0; grid.dim()], cut, cut),
        EnergySet::Window(w) => integrate_columns(grid, &cols, &w.x0_prime, w.s, cut),
    }
}

/// `F(s) = ∫_{Ω̂_s(x0)} |∇w|²` at each radius in `radii`.
pub fn local_energy_profile(
    grid: &MappedGrid,
    grad: &GradientField,
    x0_prime: &[f64],
    radii: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let cols = column_integrals(grid, |node| grad.norm(node).powi(2));
    let cut = grid.region.r_analyze;
    radii
        .iter()
        .map(|&s| {
            let w = grid.region.window(x0_prime, Some(s))?;
            Ok((s, integrate_columns(grid, &cols, &w.x0_prime, w.s, cut)))
        })
        .collect()
}

/// `‖v‖²_{L²(Ω_{r_solve})}` of nodal values laid out like the unknowns.
pub fn l2_norm_squared(grid: &MappedGrid, values: &[f64], ncomp: usize) -> Result<f64> {
    if values.len() != grid.nodes() * ncomp {
        return Err(Error::InvalidParameter("nodal field does not match the grid".into()));
    }
    let cols = column_integrals(grid, |node| {
        (0..ncomp).map(|l| values[dof(ncomp, node, l)].powi(2)).sum()
    });
    let r = grid.region.r_solve;
    // the tangential grid spans the closed ball; widen so edge cells count
    Ok(integrate_columns(grid, &cols, &vec![0.0; grid.dim()], r * (1.0 + 1e-12), r * (1.0 + 1e-12)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::gradient::gradient;
    use crate::geometry::{GapProfile, NarrowRegion};
    use crate::mesh_solver::build_grid;

    fn nodal(grid: &MappedGrid, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut v = vec![0.0; grid.nodes()];
        for col in 0..grid.ncols() {
            for it in 0..grid.nt {
                v[grid.node(col, it)] = f(&grid.physical(col, it));
            }
        }
        v
    }

    #[test]
    fn flat_gap_energy_converges_at_second_order() {
        // u = x1 (x2 + ε/2)/ε, |∇u|² = ((x2+ε/2)² + x1²)/ε²
        let eps = 0.1;
        let r = NarrowRegion::new(2, eps, GapProfile::flat(1)).unwrap();
        // ∫_{-1/2}^{1/2} ∫ over the gap, computed in closed form
        let exact = {
            let a = 0.5f64;
            let int_z2 = eps.powi(3) / 3.0;
            (2.0 * a * int_z2 + (2.0 * a.powi(3) / 3.0) * eps) / (eps * eps)
        };
        let err = |nx: usize, nt: usize| {
            let g = build_grid(&r, nx, nt).unwrap();
            let v = nodal(&g, |x| x[0] * (x[1] + eps / 2.0) / eps);
            let gf = gradient(&g, &v, 1);
            (energy(&g, &gf, &EnergySet::Half) - exact).abs()
        };
        let (e1, e2, e3) = (err(13, 9), err(25, 17), err(49, 33));
        assert!((e1 / e2).log2() > 1.8 && (e2 / e3).log2() > 1.8, "{e1} {e2} {e3}");
    }

    #[test]
    fn window_energy_is_monotone_and_bounded_by_half_region() {
        let r = NarrowRegion::new(2, 0.05, GapProfile::quadratic(1)).unwrap();
        let g = build_grid(&r, 33, 9).unwrap();
        let v = nodal(&g, |x| x[0].sin() + x[1] * 3.0);
        let gf = gradient(&g, &v, 1);
        let prof = local_energy_profile(&g, &gf, &[0.1], &[0.01, 0.05, 0.2, 0.4]).unwrap();
        for pair in prof.windows(2) {
            assert!(pair[1].1 >= pair[0].1);
        }
        assert!(prof[3].1 <= energy(&g, &gf, &EnergySet::Half) + 1e-14);
    }

    #[test]
    fn l2_norm_of_one_is_the_area() {
        let eps = 0.1;
        let r = NarrowRegion::new(2, eps, GapProfile::quadratic(1)).unwrap();
        // ∫_{-1}^{1} (ε + x²) dx
        let exact = 2.0 * eps + 2.0 / 3.0;
        let g = build_grid(&r, 129, 9).unwrap();
        let v = vec![1.0; g.nodes()];
        assert!((l2_norm_squared(&g, &v, 1).unwrap() - exact).abs() < 1e-4);
        let r3 = NarrowRegion::new(3, eps, GapProfile::quadratic(2)).unwrap();
        let g3 = build_grid(&r3, 65, 9).unwrap();
        let v3 = vec![1.0; g3.nodes()];
        // ∫_{|x'|<1} (ε + |x'|²) dx'
        let exact3 = std::f64::consts::PI * (eps + 0.5);
        let got = l2_norm_squared(&g3, &v3, 1).unwrap();
        assert!((got - exact3).abs() / exact3 < 0.02, "{got} {exact3}");
    }
}
