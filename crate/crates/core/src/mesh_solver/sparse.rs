//! Compressed-row matrices and a banded LU factorization with partial
//! pivoting.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicates are summed and
    /// columns sorted. Explicit zeros are kept so the pattern is stable.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < nrows, "column {c} out of range");
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map(|e| e.1).unwrap_or(0.0)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `‖b − A x‖₂ / ‖b‖₂`, or the absolute residual when `b = 0`.
    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.nrows];
        self.matvec(x, &mut ax);
        let r: f64 = ax.iter().zip(b).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nb > 0.0 {
            r / nb
        } else {
            r
        }
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    /// Whether `(i, j)` stored implies `(j, i)` stored.
    pub fn pattern_symmetric(&self) -> bool {
        (0..self.nrows).all(|i| {
            self.row(i)
                .all(|(j, _)| self.row(j).any(|(k, _)| k == i))
        })
    }
}

/// LU factors of a banded matrix, `P A = L U`, stored row-wise with the
/// upper band widened by `kl` to absorb pivoting fill.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    /// Row `i` holds columns `i − kl ..= i + ku + kl`.
    ab: Vec<f64>,
    /// Multipliers of elimination step `k` for rows `k+1 ..= k+kl`.
    mult: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Floating-point work estimate `n · kl · (kl + ku)`.
    pub fn cost(n: usize, kl: usize, ku: usize) -> f64 {
        n as f64 * kl.max(1) as f64 * (kl + ku + 1) as f64
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows;
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut ab = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                ab[i * width + (j + kl - i)] = v;
            }
        }
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        let mut mult = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0; n];
        let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = ab[at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = ab[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * 1e-300 || best == 0.0 {
                return Err(Error::Solver {
                    msg: format!("zero pivot at row {k} in banded LU"),
                    residual: f64::NAN,
                    history: Vec::new(),
                });
            }
            piv[k] = p;
            let last_col = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    ab.swap(at(k, j), at(p, j));
                }
            }
            let pivot = ab[at(k, k)];
            for i in k + 1..=last_row {
                let m = ab[at(i, k)] / pivot;
                mult[k * kl.max(1) + (i - k - 1)] = m;
                ab[at(i, k)] = 0.0;
                if m != 0.0 {
                    for j in k + 1..=last_col {
                        ab[at(i, j)] -= m * ab[at(k, j)];
                    }
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            width,
            ab,
            mult,
            piv,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, w) = (self.n, self.kl, self.width);
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    x[i] -= self.mult[k * kl.max(1) + (i - k - 1)] * xk;
                }
            }
        }
        let ku_total = w - 1 - kl;
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + ku_total).min(n - 1) {
                s -= self.ab[k * w + (j + kl - k)] * x[j];
            }
            x[k] = s / self.ab[k * w + kl];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(kl);
                let hi = (i + ku).min(n - 1);
                (lo..=hi)
                    .map(|j| (j, rng.gen_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn csr_merges_duplicates_and_sorts() {
        let m = CsrMatrix::from_rows(vec![vec![(1, 2.0), (0, 1.0), (1, 3.0)], vec![(1, 4.0)]]);
        assert_eq!(m.col_idx, vec![0, 1, 1]);
        assert_eq!(m.values, vec![1.0, 5.0, 4.0]);
        assert_eq!(m.get(0, 1), 5.0);
        assert_eq!(m.bandwidths(), (0, 1));
        assert!(!m.pattern_symmetric());
    }

    #[test]
    fn banded_lu_solves_random_systems_with_pivoting() {
        for (n, kl, ku, seed) in [(40, 3, 2, 1), (57, 5, 7, 2), (10, 0, 0, 3), (30, 1, 1, 4)] {
            let mut a = random_banded(n, kl, ku, seed);
            // a zero diagonal forces a row interchange
            if kl > 0 {
                let k = a.row_ptr[0];
                a.values[k] = 0.0;
            }
            let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut b = vec![0.0; n];
            a.matvec(&x_true, &mut b);
            let lu = BandedLu::factor(&a).unwrap();
            let x = lu.solve(&b);
            assert!(a.relative_residual(&x, &b) < 1e-12, "n={n}");
        }
    }

    #[test]
    fn singular_matrix_reported() {
        let a = CsrMatrix::from_rows(vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]]);
        assert!(matches!(BandedLu::factor(&a), Err(Error::Solver { .. })));
    }
}
