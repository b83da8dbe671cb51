//! Tensor grid in `(x', t)` mapped onto the narrow region.

use crate::error::{Error, Result};
use crate::geometry::{norm, ColumnMetric, NarrowRegion};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Interior,
    /// On or next to the lateral boundary; Dirichlet at every height.
    Lateral,
    /// Outside the closed solve ball (n = 3 corners); not part of the problem.
    Outside,
}

#[derive(Debug, Clone)]
pub struct Column {
    pub x_prime: [f64; 2],
    pub index: [usize; 2],
    pub kind: ColumnKind,
    pub metric: ColumnMetric,
}

#[derive(Debug, Clone)]
pub struct MappedGrid {
    pub region: NarrowRegion,
    pub nx: usize,
    pub nt: usize,
    /// Tangential spacing.
    pub h: f64,
    /// Vertical spacing in `t`.
    pub k: f64,
    pub columns: Vec<Column>,
    /// Metrics at `x' + h/2 e_γ` for each column with a right neighbour
    /// along `γ`, indexed like `columns`.
    pub half_metrics: Vec<Vec<Option<ColumnMetric>>>,
}

impl MappedGrid {
    pub fn n(&self) -> usize {
        self.region.n
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn nodes(&self) -> usize {
        self.columns.len() * self.nt
    }

    pub fn node(&self, col: usize, it: usize) -> usize {
        col * self.nt + it
    }

    pub fn t(&self, it: usize) -> f64 {
        if it + 1 == self.nt {
            1.0
        } else {
            it as f64 * self.k
        }
    }

    /// Column-index stride along tangential direction `γ`.
    pub fn stride(&self, gamma: usize) -> usize {
        if gamma == 0 {
            1
        } else {
            self.nx
        }
    }

    /// Neighbouring column along `γ` at offset `±1`.
    pub fn neighbour(&self, col: usize, gamma: usize, forward: bool) -> Option<usize> {
        let i = self.columns[col].index[gamma];
        if forward && i + 1 < self.nx {
            Some(col + self.stride(gamma))
        } else if !forward && i > 0 {
            Some(col - self.stride(gamma))
        } else {
            None
        }
    }

    pub fn column_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .enumerate()
            .map(|(g, &i)| i * self.stride(g))
            .sum()
    }

    /// Column at `x' = 0`.
    pub fn centre_column(&self) -> usize {
        let mid = (self.nx - 1) / 2;
        self.column_index(&vec![mid; self.dim()])
    }

    pub fn mid_t(&self) -> usize {
        (self.nt - 1) / 2
    }

    /// Physical coordinates of a node.
    pub fn physical(&self, col: usize, it: usize) -> Vec<f64> {
        let c = &self.columns[col];
        let mut x = c.x_prime[..self.dim()].to_vec();
        x.push(c.metric.x_n(self.t(it)));
        x
    }

    pub fn x_prime(&self, col: usize) -> &[f64] {
        &self.columns[col].x_prime[..self.dim()]
    }

    pub fn is_dirichlet(&self, col: usize, it: usize) -> bool {
        self.columns[col].kind != ColumnKind::Interior || it == 0 || it + 1 == self.nt
    }
}

/// Builds the mapped grid; `nx` and `nt` must be odd and at least 9 so that
/// `x' = 0` and `t = 1/2` are nodes.
pub fn build_grid(region: &NarrowRegion, nx: usize, nt: usize) -> Result<MappedGrid> {
    for (name, v) in [("nx", nx), ("nt", nt)] {
        if v < 9 || v % 2 == 0 {
            return Err(Error::InvalidParameter(format!("{name}={v} must be odd and >= 9")));
        }
    }
    let dim = region.dim();
    let r = region.r_solve;
    let h = 2.0 * r / (nx - 1) as f64;
    let coord = |i: usize| {
        if 2 * i + 1 == nx {
            0.0
        } else {
            -r + h * i as f64
        }
    };
    let ncols = nx.pow(dim as u32);
    let inside = |p: &[f64]| norm(p) <= r * (1.0 + 1e-12);
    let mut columns = Vec::with_capacity(ncols);
    for col in 0..ncols {
        let mut index = [0usize; 2];
        let mut x_prime = [0.0; 2];
        let mut rem = col;
        for g in 0..dim {
            index[g] = rem % nx;
            rem /= nx;
            x_prime[g] = coord(index[g]);
        }
        let xp = &x_prime[..dim];
        let kind = if !inside(xp) {
            ColumnKind::Outside
        } else {
            let strictly = norm(xp) < r * (1.0 - 1e-12);
            let mut all_in = strictly;
            // every neighbour in the 3^dim block must exist and lie in the ball
            let offsets = 3usize.pow(dim as u32);
            for o in 0..offsets {
                let mut q = [0.0; 2];
                let mut rem = o;
                for g in 0..dim {
                    let d = (rem % 3) as isize - 1;
                    rem /= 3;
                    let j = index[g] as isize + d;
                    if j < 0 || j >= nx as isize {
                        all_in = false;
                    } else {
                        q[g] = coord(j as usize);
                    }
                }
                if !inside(&q[..dim]) {
                    all_in = false;
                }
            }
            if all_in {
                ColumnKind::Interior
            } else {
                ColumnKind::Lateral
            }
        };
        let metric = ColumnMetric::new(region, xp);
        if kind != ColumnKind::Outside && !(metric.delta.value > 0.0) {
            return Err(Error::Geometry(format!(
                "gap width {} at x' = {xp:?}",
                metric.delta.value
            )));
        }
        columns.push(Column {
            x_prime,
            index,
            kind,
            metric,
        });
    }
    let mut half_metrics = vec![vec![None; ncols]; dim];
    for (g, hm) in half_metrics.iter_mut().enumerate() {
        for (col, c) in columns.iter().enumerate() {
            if c.index[g] + 1 < nx {
                let mut p = c.x_prime;
                p[g] += 0.5 * h;
                if inside(&p[..dim]) {
                    let m = ColumnMetric::new(region, &p[..dim]);
                    if !(m.delta.value > 0.0) {
                        return Err(Error::Geometry(format!("gap width {} at x' = {p:?}", m.delta.value)));
                    }
                    hm[col] = Some(m);
                }
            }
        }
    }
    Ok(MappedGrid {
        region: region.clone(),
        nx,
        nt,
        h,
        k: 1.0 / (nt - 1) as f64,
        columns,
        half_metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GapProfile;

    #[test]
    fn quadratic_grid_example() {
        let r = NarrowRegion::new(2, 0.1, GapProfile::quadratic(1)).unwrap();
        let g = build_grid(&r, 33, 17).unwrap();
        assert_eq!(g.nodes(), 561);
        let c = g.centre_column();
        assert_eq!(g.x_prime(c), &[0.0]);
        assert_eq!(g.physical(c, 0)[1], -0.05);
        assert_eq!(g.physical(c, 16)[1], 0.05);
        assert_eq!(g.t(g.mid_t()), 0.5);
        for (i, col) in g.columns.iter().enumerate() {
            assert_eq!(col.metric.delta.value, r.gap_width(g.x_prime(i)).unwrap());
        }
        assert_eq!(g.columns[0].kind, ColumnKind::Lateral);
        assert_eq!(g.columns[32].kind, ColumnKind::Lateral);
        assert!(g.columns[1..32].iter().all(|c| c.kind == ColumnKind::Interior));
    }

    #[test]
    fn flat_grid_has_no_slope() {
        let r = NarrowRegion::new(2, 0.1, GapProfile::flat(1)).unwrap();
        let g = build_grid(&r, 9, 9).unwrap();
        for c in &g.columns {
            assert_eq!(c.metric.slope(0, 0.3), 0.0);
        }
    }

    #[test]
    fn rejects_even_or_small_sizes() {
        let r = NarrowRegion::new(2, 0.1, GapProfile::quadratic(1)).unwrap();
        assert!(build_grid(&r, 32, 17).is_err());
        assert!(build_grid(&r, 7, 17).is_err());
    }

    #[test]
    fn three_dimensional_staircase_ball() {
        let r = NarrowRegion::new(3, 0.1, GapProfile::quadratic(2)).unwrap();
        let g = build_grid(&r, 9, 9).unwrap();
        let kinds = |k| g.columns.iter().filter(|c| c.kind == k).count();
        assert_eq!(kinds(ColumnKind::Outside) + kinds(ColumnKind::Lateral) + kinds(ColumnKind::Interior), 81);
        assert!(kinds(ColumnKind::Outside) > 0 && kinds(ColumnKind::Interior) > 0);
        assert_eq!(g.columns[g.centre_column()].kind, ColumnKind::Interior);
    }
}
