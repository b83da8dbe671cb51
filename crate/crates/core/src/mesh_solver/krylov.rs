//! BiCGStab with an ILU(0) preconditioner.

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Incomplete LU with the sparsity pattern of the matrix.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    m: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut m = a.clone();
        let n = m.nrows;
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                if m.col_idx[k] == i {
                    *d = k;
                }
            }
            if *d == usize::MAX {
                return Err(Error::Solver {
                    msg: format!("ILU(0): row {i} has no diagonal entry"),
                    residual: f64::NAN,
                    history: Vec::new(),
                });
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (m.row_ptr[i], m.row_ptr[i + 1]);
            for k in start..end {
                pos[m.col_idx[k]] = k;
            }
            for k in start..end {
                let c = m.col_idx[k];
                if c >= i {
                    break;
                }
                let piv = m.values[diag[c]];
                if piv == 0.0 {
                    return Err(Error::Solver {
                        msg: format!("ILU(0): zero pivot at row {c}"),
                        residual: f64::NAN,
                        history: Vec::new(),
                    });
                }
                let f = m.values[k] / piv;
                m.values[k] = f;
                for kk in diag[c] + 1..m.row_ptr[c + 1] {
                    let p = pos[m.col_idx[kk]];
                    if p != usize::MAX {
                        m.values[p] -= f * m.values[kk];
                    }
                }
            }
            for k in start..end {
                pos[m.col_idx[k]] = usize::MAX;
            }
            if m.values[diag[i]] == 0.0 {
                return Err(Error::Solver {
                    msg: format!("ILU(0): zero pivot at row {i}"),
                    residual: f64::NAN,
                    history: Vec::new(),
                });
            }
        }
        Ok(Ilu0 { m, diag })
    }

    /// `z = (LU)⁻¹ r`.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let m = &self.m;
        let n = m.nrows;
        for i in 0..n {
            let mut s = r[i];
            for k in m.row_ptr[i]..self.diag[i] {
                s -= m.values[k] * z[m.col_idx[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag[i] + 1..m.row_ptr[i + 1] {
                s -= m.values[k] * z[m.col_idx[k]];
            }
            z[i] = s / m.values[self.diag[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone)]
pub struct KrylovOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual of the original (unscaled) system after each iteration.
    pub history: Vec<f64>,
}

/// Solves `A x = b` to relative residual `tol` of the original system.
///
/// Rows are equilibrated by their largest entry before building the
/// preconditioner.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<KrylovOutcome> {
    let n = a.nrows;
    let mut scaled = a.clone();
    let mut rhs = b.to_vec();
    for i in 0..n {
        let (s, e) = (a.row_ptr[i], a.row_ptr[i + 1]);
        let m = a.values[s..e].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m > 0.0 {
            for v in &mut scaled.values[s..e] {
                *v /= m;
            }
            rhs[i] /= m;
        }
    }
    let ilu = Ilu0::new(&scaled)?;
    let nb = norm(b);
    let true_residual = |x: &[f64]| a.relative_residual(x, b);

    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut history = Vec::new();
    if nb == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovOutcome {
            x,
            iterations: 0,
            history: vec![0.0],
        });
    }
    let mut tmp = vec![0.0; n];
    let mut r = vec![0.0; n];
    scaled.matvec(&x, &mut tmp);
    for i in 0..n {
        r[i] = rhs[i] - tmp[i];
    }
    let mut restarts = 0;
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let rhs_norm = norm(&rhs);
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 || omega == 0.0 {
            // breakdown: restart from the current iterate
            restarts += 1;
            if restarts > 20 {
                let res = true_residual(&x);
                return Err(Error::Solver {
                    msg: "BiCGStab breakdown".into(),
                    residual: res,
                    history,
                });
            }
            scaled.matvec(&x, &mut tmp);
            for i in 0..n {
                r[i] = rhs[i] - tmp[i];
            }
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        ilu.apply(&p, &mut y);
        scaled.matvec(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            omega = 0.0;
            continue;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        ilu.apply(&s, &mut z);
        scaled.matvec(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        let scaled_rel = norm(&r) / rhs_norm;
        // the scaled residual is a cheap proxy; confirm on the original system
        if scaled_rel < tol || it % 25 == 0 {
            let res = true_residual(&x);
            history.push(res);
            if !res.is_finite() {
                return Err(Error::Solver {
                    msg: "BiCGStab diverged".into(),
                    residual: res,
                    history,
                });
            }
            if res <= tol {
                return Ok(KrylovOutcome {
                    x,
                    iterations: it,
                    history,
                });
            }
            if scaled_rel < tol {
                // recompute the recursive residual to remove drift
                scaled.matvec(&x, &mut tmp);
                for i in 0..n {
                    r[i] = rhs[i] - tmp[i];
                }
            }
        }
    }
    let res = true_residual(&x);
    history.push(res);
    Err(Error::Solver {
        msg: format!("BiCGStab did not converge in {max_iter} iterations"),
        residual: res,
        history,
    })
}
