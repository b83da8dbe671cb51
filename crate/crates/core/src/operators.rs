//! Coefficient tensors of the divergence-form system
//! `∂_α(A_{ij}^{αβ} ∂_β u^j + B_{ij}^α u^j) + C_{ij}^β ∂_β u^j + D_{ij} u^j = f^i`.
//!
//! Every coefficient entry is a polynomial in the physical coordinates
//! `x1..xn`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{c2_pointwise, ball_samples, ColumnMetric, NarrowRegion};
use crate::poly::{Jet, PolynomialField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum OperatorKind {
    Laplace,
    Lame { lambda: f64, mu: f64 },
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticOperator {
    pub n: usize,
    /// Number of solution components.
    pub ncomp: usize,
    pub kind: OperatorKind,
    /// Indexed by [`EllipticOperator::a_index`].
    pub a: Vec<PolynomialField>,
    /// Indexed by [`EllipticOperator::b_index`].
    pub b: Vec<PolynomialField>,
    pub c: Vec<PolynomialField>,
    /// Indexed by `i * ncomp + j`.
    pub d: Vec<PolynomialField>,
    pub lambda_claim: f64,
    pub big_lambda_claim: f64,
    pub kappa2_claim: f64,
}

/// Coefficient values at one point, laid out like the tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoefficientValues {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

fn constant(n: usize, v: f64) -> PolynomialField {
    PolynomialField::constant_f64(n, v).expect("finite constant")
}

fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

impl EllipticOperator {
    pub fn laplace(n: usize) -> Result<Self> {
        check_dim(n)?;
        let a = (0..n * n)
            .map(|k| constant(n, delta(k / n, k % n)))
            .collect();
        Ok(EllipticOperator {
            n,
            ncomp: 1,
            kind: OperatorKind::Laplace,
            a,
            b: vec![PolynomialField::zero(n); n],
            c: vec![PolynomialField::zero(n); n],
            d: vec![PolynomialField::zero(n)],
            lambda_claim: 1.0,
            big_lambda_claim: 1.0,
            kappa2_claim: 1.0,
        })
    }

    /// Elasticity operator with divergence `μΔu + (λ+μ)∇(∇·u)`.
    pub fn lame(n: usize, lambda: f64, mu: f64) -> Result<Self> {
        check_dim(n)?;
        if !(lambda.is_finite() && mu.is_finite() && mu > 0.0 && lambda + mu >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Lamé parameters need mu > 0 and lambda + mu >= 0 (lambda={lambda}, mu={mu})"
            )));
        }
        let nc = n;
        let mut a = vec![PolynomialField::zero(n); nc * nc * n * n];
        let mut big = 0.0f64;
        for i in 0..nc {
            for j in 0..nc {
                for al in 0..n {
                    for be in 0..n {
                        let v = lambda * delta(al, i) * delta(be, j)
                            + mu * (delta(al, be) * delta(i, j) + delta(al, j) * delta(be, i));
                        big = big.max(v.abs());
                        a[((i * nc + j) * n + al) * n + be] = constant(n, v);
                    }
                }
            }
        }
        Ok(EllipticOperator {
            n,
            ncomp: nc,
            kind: OperatorKind::Lame { lambda, mu },
            a,
            b: vec![PolynomialField::zero(n); nc * nc * n],
            c: vec![PolynomialField::zero(n); nc * nc * n],
            d: vec![PolynomialField::zero(n); nc * nc],
            lambda_claim: mu,
            big_lambda_claim: big,
            kappa2_claim: big,
        })
    }

    /// Operator from explicit coefficient lists; claims default to the
    /// sampled bounds and are refined by the estimators.
    pub fn from_coefficients(
        n: usize,
        ncomp: usize,
        a: Vec<PolynomialField>,
        b: Vec<PolynomialField>,
        c: Vec<PolynomialField>,
        d: Vec<PolynomialField>,
    ) -> Result<Self> {
        check_dim(n)?;
        if ncomp == 0 {
            return Err(Error::InvalidParameter("at least one component".into()));
        }
        let want = [
            ("A", a.len(), ncomp * ncomp * n * n),
            ("B", b.len(), ncomp * ncomp * n),
            ("C", c.len(), ncomp * ncomp * n),
            ("D", d.len(), ncomp * ncomp),
        ];
        for (name, got, expected) in want {
            if got != expected {
                return Err(Error::InvalidParameter(format!(
                    "{name} has {got} entries, expected {expected}"
                )));
            }
        }
        for p in a.iter().chain(&b).chain(&c).chain(&d) {
            if p.n_vars() != n {
                return Err(Error::InvalidParameter(format!(
                    "coefficient polynomial over {} variables, expected {n}",
                    p.n_vars()
                )));
            }
            p.check_degree()?;
        }
        Ok(EllipticOperator {
            n,
            ncomp,
            kind: OperatorKind::Custom,
            a,
            b,
            c,
            d,
            lambda_claim: 0.0,
            big_lambda_claim: 0.0,
            kappa2_claim: 0.0,
        })
    }

    pub fn a_index(&self, i: usize, j: usize, alpha: usize, beta: usize) -> usize {
        ((i * self.ncomp + j) * self.n + alpha) * self.n + beta
    }

    pub fn b_index(&self, i: usize, j: usize, alpha: usize) -> usize {
        (i * self.ncomp + j) * self.n + alpha
    }

    pub fn has_lower_order(&self) -> bool {
        self.b.iter().chain(&self.c).chain(&self.d).any(|p| !p.is_zero())
    }

    pub fn is_constant(&self) -> bool {
        self.a
            .iter()
            .chain(&self.b)
            .chain(&self.c)
            .chain(&self.d)
            .all(|p| p.is_constant())
    }

    pub fn eval_coefficients(&self, x: &[f64], out: &mut CoefficientValues) {
        let fill = |src: &[PolynomialField], dst: &mut Vec<f64>| {
            dst.clear();
            dst.extend(src.iter().map(|p| if p.is_zero() { 0.0 } else { p.eval(x) }));
        };
        fill(&self.a, &mut out.a);
        fill(&self.b, &mut out.b);
        fill(&self.c, &mut out.c);
        fill(&self.d, &mut out.d);
    }

    /// `(L u)^i` at `x` given value, gradient and Hessian of every component.
    pub fn apply_jet(&self, x: &[f64], u: &[Jet]) -> Vec<f64> {
        let (n, nc) = (self.n, self.ncomp);
        assert_eq!(u.len(), nc);
        let mut out = vec![0.0; nc];
        for i in 0..nc {
            let mut acc = 0.0;
            for j in 0..nc {
                let uj = &u[j];
                for al in 0..n {
                    for be in 0..n {
                        let p = &self.a[self.a_index(i, j, al, be)];
                        if p.is_zero() {
                            continue;
                        }
                        let aj = p.jet(x);
                        acc += aj.grad[al] * uj.grad[be] + aj.value * uj.hess[al][be];
                    }
                    let bp = &self.b[self.b_index(i, j, al)];
                    if !bp.is_zero() {
                        let bj = bp.jet(x);
                        acc += bj.grad[al] * uj.value + bj.value * uj.grad[al];
                    }
                    let cp = &self.c[self.b_index(i, j, al)];
                    if !cp.is_zero() {
                        acc += cp.eval(x) * uj.grad[al];
                    }
                }
                let dp = &self.d[i * nc + j];
                if !dp.is_zero() {
                    acc += dp.eval(x) * uj.value;
                }
            }
            out[i] = acc;
        }
        out
    }

    /// Coefficients of `y ↦ L` seen in the window variables
    /// `x = x0 + δ y`: `Â = A∘map`, `B̂ = δ B∘map`, `Ĉ = δ C∘map`, `D̂ = δ² D∘map`.
    pub fn rescale_coefficients(&self, x0: &[f64], delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta={delta} must be positive")));
        }
        if x0.len() != self.n {
            return Err(Error::InvalidParameter(format!(
                "centre must have {} coordinates",
                self.n
            )));
        }
        let scale = vec![delta; self.n];
        let map = |src: &[PolynomialField], factor: f64| -> Result<Vec<PolynomialField>> {
            src.iter()
                .map(|p| p.compose_affine(&scale, x0)?.scale_f64(factor))
                .collect()
        };
        let mut out = self.clone();
        out.a = map(&self.a, 1.0)?;
        out.b = map(&self.b, delta)?;
        out.c = map(&self.c, delta)?;
        out.d = map(&self.d, delta * delta)?;
        out.kind = match self.kind {
            OperatorKind::Laplace if !self.has_lower_order() => OperatorKind::Laplace,
            OperatorKind::Lame { .. } => self.kind,
            _ => OperatorKind::Custom,
        };
        Ok(out)
    }

    /// Returns the operator with `c δ_{αβ} δ_{ij}` added to `A`.
    pub fn shifted_by_identity(&self, c: f64) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..self.ncomp {
            for al in 0..self.n {
                let k = self.a_index(i, i, al, al);
                out.a[k] = out.a[k].add(&PolynomialField::constant_f64(self.n, c)?);
            }
        }
        out.kind = OperatorKind::Custom;
        Ok(out)
    }

    pub fn scaled_principal(&self, s: f64) -> Result<Self> {
        let mut out = self.clone();
        out.a = self.a.iter().map(|p| p.scale_f64(s)).collect::<Result<_>>()?;
        out.kind = OperatorKind::Custom;
        Ok(out)
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n == 2 || n == 3 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("dimension n={n} not in {{2,3}}")))
    }
}

/// Maximal trial mode number per direction.
const MAX_MODE: u32 = 3;
/// Modes summed per test-field component.
const MODES_PER_FIELD: usize = 3;

#[derive(Debug, Clone, Copy)]
struct Mode {
    coef: f64,
    k: [u32; 3],
    kt: u32,
}

/// `sin(kθ)` or `sin²(kθ)` with first and second θ-derivatives.
fn factor(k: u32, theta: f64, squared: bool) -> (f64, f64, f64) {
    let k = k as f64;
    if squared {
        let s = (k * theta).sin();
        (s * s, k * (2.0 * k * theta).sin(), 2.0 * k * k * (2.0 * k * theta).cos())
    } else {
        let (s, c) = (k * theta).sin_cos();
        (s, k * c, -k * k * s)
    }
}

/// Computational derivatives of `Σ modes` at `(s, t)`: value, `∂_s`, `∂_t`,
/// `∂_ss`, `∂_st`, `∂_tt`.
struct CompDerivs {
    v: f64,
    s: [f64; 3],
    t: f64,
    ss: [[f64; 3]; 3],
    st: [f64; 3],
    tt: f64,
}

fn eval_modes(modes: &[Mode], dim: usize, s: &[f64], t: f64, rho: f64, squared: bool) -> CompDerivs {
    let cs = std::f64::consts::PI / (2.0 * rho);
    let ct = std::f64::consts::PI;
    let mut out = CompDerivs {
        v: 0.0,
        s: [0.0; 3],
        t: 0.0,
        ss: [[0.0; 3]; 3],
        st: [0.0; 3],
        tt: 0.0,
    };
    for m in modes {
        let mut f = [(0.0, 0.0, 0.0); 3];
        for a in 0..dim {
            let (v, d1, d2) = factor(m.k[a], cs * (s[a] + rho), squared);
            f[a] = (v, cs * d1, cs * cs * d2);
        }
        let (tv, t1, t2) = factor(m.kt, ct * t, squared);
        let (tv, t1, t2) = (tv, ct * t1, ct * ct * t2);
        let prod_except = |skip: &[usize]| -> f64 {
            (0..dim).filter(|a| !skip.contains(a)).map(|a| f[a].0).product()
        };
        let all = prod_except(&[]);
        out.v += m.coef * all * tv;
        out.t += m.coef * all * t1;
        out.tt += m.coef * all * t2;
        for a in 0..dim {
            let ga = f[a].1 * prod_except(&[a]);
            out.s[a] += m.coef * ga * tv;
            out.st[a] += m.coef * ga * t1;
            for b in 0..dim {
                let hab = if a == b {
                    f[a].2 * prod_except(&[a])
                } else {
                    f[a].1 * f[b].1 * prod_except(&[a, b])
                };
                out.ss[a][b] += m.coef * hab * tv;
            }
        }
    }
    out
}

fn random_modes(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Mode> {
    (0..MODES_PER_FIELD)
        .map(|_| {
            let mut k = [1; 3];
            for kk in k.iter_mut().take(dim) {
                *kk = rng.gen_range(1..=MAX_MODE);
            }
            Mode {
                coef: rng.gen_range(-1.0..1.0),
                k,
                kt: rng.gen_range(1..=MAX_MODE),
            }
        })
        .collect()
}

/// Randomized lower-bound search for the integral ellipticity constant.
///
/// Test fields are tensor-product sine modes in the computational
/// coordinates on the largest tangential cube inside the solve ball, so they
/// vanish on its boundary. When `ncomp == n`, divergence-free candidates
/// `ξ¹ = ∂_{x_n}ψ`, `ξⁿ = −∂_{x_1}ψ` are tried as well. Quadrature is the
/// trapezoid rule on an `nx^(n-1) × nt` grid with the Jacobian `δ`.
pub fn estimate_ellipticity(
    op: &EllipticOperator,
    region: &NarrowRegion,
    nx: usize,
    nt: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials < 32 {
        return Err(Error::InvalidParameter(format!("trials={trials} < 32")));
    }
    if nx < 3 || nt < 3 {
        return Err(Error::InvalidParameter("quadrature grid needs >= 3 nodes".into()));
    }
    if op.n != region.n {
        return Err(Error::InvalidParameter("operator and region dimensions differ".into()));
    }
    let (n, nc, dim) = (op.n, op.ncomp, region.dim());
    let rho = region.r_solve / (dim as f64).sqrt();
    let hs = 2.0 * rho / (nx - 1) as f64;
    let ht = 1.0 / (nt - 1) as f64;
    let trap = |i: usize, m: usize| if i == 0 || i == m - 1 { 0.5 } else { 1.0 };

    // quadrature nodes: (s, t, weight, metric)
    let ncols = nx.pow(dim as u32);
    let mut nodes = Vec::with_capacity(ncols * nt);
    for col in 0..ncols {
        let mut s = [0.0; 3];
        let mut w = hs.powi(dim as i32);
        let mut rem = col;
        for sa in s.iter_mut().take(dim) {
            let i = rem % nx;
            rem /= nx;
            *sa = -rho + hs * i as f64;
            w *= trap(i, nx);
        }
        let metric = ColumnMetric::new(region, &s[..dim]);
        for it in 0..nt {
            let t = it as f64 * ht;
            nodes.push((s, t, w * ht * trap(it, nt) * metric.delta.value, metric));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = CoefficientValues::default();
    let mut best = f64::INFINITY;
    // gradients[j][b] at one node
    let mut quotient = |fields: &dyn Fn(&[f64; 3], f64, &ColumnMetric) -> Vec<[f64; 3]>| {
        let (mut num, mut den) = (0.0, 0.0);
        for (s, t, w, metric) in &nodes {
            let g = fields(s, *t, metric);
            let x = {
                let mut x = s[..dim].to_vec();
                x.push(metric.x_n(*t));
                x
            };
            op.eval_coefficients(&x, &mut coeffs);
            let mut q = 0.0;
            for i in 0..nc {
                for j in 0..nc {
                    for al in 0..n {
                        for be in 0..n {
                            q += coeffs.a[op.a_index(i, j, al, be)] * g[i][al] * g[j][be];
                        }
                    }
                }
            }
            num += w * q;
            den += w * g.iter().flat_map(|gj| gj[..n].iter()).map(|v| v * v).sum::<f64>();
        }
        (num, den)
    };

    for _ in 0..trials {
        let generic: Vec<Vec<Mode>> = (0..nc).map(|_| random_modes(&mut rng, dim)).collect();
        let (num, den) = quotient(&|s, t, m| {
            generic
                .iter()
                .map(|modes| {
                    let d = eval_modes(modes, dim, s, t, rho, false);
                    m.physical_gradient(t, &d.s, d.t)
                })
                .collect()
        });
        if den > 1e-300 {
            best = best.min(num / den);
        }
        if nc == n {
            let stream = random_modes(&mut rng, dim);
            let (num, den) = quotient(&|s, t, m| {
                let d = eval_modes(&stream, dim, s, t, rho, true);
                let h = m.physical_hessian(t, d.t, &d.ss, &d.st, d.tt);
                let mut g = vec![[0.0; 3]; nc];
                for b in 0..n {
                    g[0][b] = h[b][n - 1];
                    g[n - 1][b] = -h[b][0];
                }
                g
            });
            if den > 1e-300 {
                best = best.min(num / den);
            }
        }
    }
    if !best.is_finite() {
        return Err(Error::NonFinite("no admissible test field".into()));
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEstimate {
    /// Sampled `max |A_{ij}^{αβ}|`.
    pub big_lambda: f64,
    /// Sampled `‖A‖_{C²} + ‖B‖_{C²} + ‖C‖_{C²} + ‖D‖_{C²}`, each tensor norm
    /// being the maximum over its entries.
    pub kappa2: f64,
}

/// Dense-sampling sup of coefficient magnitudes and derivatives over the
/// closed solve region, with `samples` points per tangential axis and along
/// the vertical.
pub fn estimate_bounds(op: &EllipticOperator, region: &NarrowRegion, samples: usize) -> BoundEstimate {
    let samples = samples.max(2);
    let cols = ball_samples(region.dim(), samples, region.r_solve);
    let mut pts = Vec::with_capacity(cols.len() * samples);
    for c in &cols {
        for k in 0..samples {
            pts.push(region.physical_point(c, k as f64 / (samples - 1) as f64));
        }
    }
    let sup_c2 = |set: &[PolynomialField]| -> f64 {
        set.iter()
            .filter(|p| !p.is_zero())
            .map(|p| {
                if p.is_constant() {
                    p.eval(&[0.0; 3]).abs()
                } else {
                    pts.iter()
                        .map(|x| c2_pointwise(&p.jet(x), op.n))
                        .fold(0.0, f64::max)
                }
            })
            .fold(0.0, f64::max)
    };
    let big_lambda = op
        .a
        .iter()
        .filter(|p| !p.is_zero())
        .map(|p| {
            if p.is_constant() {
                p.eval(&[0.0; 3]).abs()
            } else {
                pts.iter().map(|x| p.eval(x).abs()).fold(0.0, f64::max)
            }
        })
        .fold(0.0, f64::max);
    BoundEstimate {
        big_lambda,
        kappa2: sup_c2(&op.a) + sup_c2(&op.b) + sup_c2(&op.c) + sup_c2(&op.d),
    }
}
