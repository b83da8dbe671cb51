//! Normalized height `ū`, the interpolated boundary profile `ũ` and the
//! correction source `f̃ = −L ũ`, all with exact derivatives.
//!
//! Boundary data are the traces `g±` as polynomials in `x'`; the profile is
//! `ũ^l = g⁻_l + (g⁺_l − g⁻_l) ū`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ball_samples, norm, NarrowRegion};
use crate::operators::EllipticOperator;
use crate::poly::{Jet, PolynomialField};

/// Dense samples per axis used for the cached data norms.
const NORM_SAMPLES: usize = 161;

/// Sup norms over the unit ball of a vector field of traces.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TraceNorms {
    pub c0: f64,
    /// `sup |∇g|` (Frobenius over components).
    pub grad: f64,
    /// `sup |∇²g|`.
    pub hess: f64,
    /// `sup (|g| + |∇g| + |∇²g|)`.
    pub c2: f64,
}

fn trace_norms(fields: &[PolynomialField], pts: &[Vec<f64>]) -> TraceNorms {
    let dim = fields[0].n_vars();
    let mut out = TraceNorms::default();
    for x in pts {
        let (mut v, mut g, mut h) = (0.0, 0.0, 0.0);
        for f in fields {
            let j = f.jet(x);
            v += j.value * j.value;
            for a in 0..dim {
                g += j.grad[a] * j.grad[a];
                for b in 0..dim {
                    h += j.hess[a][b] * j.hess[a][b];
                }
            }
        }
        let (v, g, h) = (v.sqrt(), g.sqrt(), h.sqrt());
        out.c0 = out.c0.max(v);
        out.grad = out.grad.max(g);
        out.hess = out.hess.max(h);
        out.c2 = out.c2.max(v + g + h);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub g_plus: Vec<PolynomialField>,
    pub g_minus: Vec<PolynomialField>,
    pub plus_norms: TraceNorms,
    pub minus_norms: TraceNorms,
}

impl BoundaryData {
    pub fn new(g_plus: Vec<PolynomialField>, g_minus: Vec<PolynomialField>) -> Result<Self> {
        if g_plus.is_empty() || g_plus.len() != g_minus.len() {
            return Err(Error::InvalidParameter(
                "g_plus and g_minus need the same positive number of components".into(),
            ));
        }
        let dim = g_plus[0].n_vars();
        if g_plus.iter().chain(&g_minus).any(|g| g.n_vars() != dim) || dim == 0 || dim > 2 {
            return Err(Error::InvalidParameter(
                "all traces must be polynomials in the same 1 or 2 tangential variables".into(),
            ));
        }
        for g in g_plus.iter().chain(&g_minus) {
            g.check_degree()?;
        }
        let per = if dim == 1 { NORM_SAMPLES * 4 } else { NORM_SAMPLES };
        let pts = ball_samples(dim, per, 1.0);
        Ok(BoundaryData {
            plus_norms: trace_norms(&g_plus, &pts),
            minus_norms: trace_norms(&g_minus, &pts),
            g_plus,
            g_minus,
        })
    }

    /// Constant traces `g⁺ = plus`, `g⁻ = minus`.
    pub fn constant(dim: usize, plus: &[f64], minus: &[f64]) -> Result<Self> {
        let mk = |v: &[f64]| -> Result<Vec<PolynomialField>> {
            v.iter().map(|&c| PolynomialField::constant_f64(dim, c)).collect()
        };
        Self::new(mk(plus)?, mk(minus)?)
    }

    pub fn ncomp(&self) -> usize {
        self.g_plus.len()
    }

    pub fn dim(&self) -> usize {
        self.g_plus[0].n_vars()
    }

    /// Data with only component `l` (zero-based) retained.
    pub fn component(&self, l: usize) -> Result<Self> {
        if l >= self.ncomp() {
            return Err(Error::InvalidParameter(format!(
                "component {} out of range 1..={}",
                l + 1,
                self.ncomp()
            )));
        }
        let keep = |src: &[PolynomialField]| -> Vec<PolynomialField> {
            src.iter()
                .enumerate()
                .map(|(k, g)| if k == l { g.clone() } else { PolynomialField::zero(g.n_vars()) })
                .collect()
        };
        Self::new(keep(&self.g_plus), keep(&self.g_minus))
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        let sc = |src: &[PolynomialField]| -> Result<Vec<PolynomialField>> {
            src.iter().map(|g| g.scale_f64(s)).collect()
        };
        Self::new(sc(&self.g_plus)?, sc(&self.g_minus)?)
    }

    /// `‖g⁺‖_{C²} + ‖g⁻‖_{C²}`.
    pub fn c2_budget(&self) -> f64 {
        self.plus_norms.c2 + self.minus_norms.c2
    }

    /// `g⁺_l(x') − g⁻_l(x')`.
    pub fn component_mismatch(&self, l: usize, x_prime: &[f64]) -> f64 {
        self.g_plus[l].eval(x_prime) - self.g_minus[l].eval(x_prime)
    }

    /// Euclidean `|g⁺(x') − g⁻(x')|`.
    pub fn mismatch(&self, x_prime: &[f64]) -> f64 {
        (0..self.ncomp())
            .map(|l| self.component_mismatch(l, x_prime).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `max_l |g⁺_l(x') − g⁻_l(x')|`.
    pub fn max_component_mismatch(&self, x_prime: &[f64]) -> f64 {
        (0..self.ncomp())
            .map(|l| self.component_mismatch(l, x_prime).abs())
            .fold(0.0, f64::max)
    }

    /// Lateral values used by the constant-extension closure: `(g⁺ + g⁻)/2`.
    pub fn average(&self, l: usize, x_prime: &[f64]) -> f64 {
        0.5 * (self.g_plus[l].eval(x_prime) + self.g_minus[l].eval(x_prime))
    }
}

fn truncate(mut j: Jet, order: u8) -> Jet {
    if order < 2 {
        j.hess = Default::default();
    }
    if order < 1 {
        j.grad = Default::default();
    }
    j
}

fn check_point(region: &NarrowRegion, x: &[f64]) -> Result<()> {
    if x.len() != region.n {
        return Err(Error::InvalidParameter(format!(
            "expected a point with {} coordinates",
            region.n
        )));
    }
    let xp = &x[..region.dim()];
    if norm(xp) > region.r_solve * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("|x'| = {} outside the solve ball", norm(xp))));
    }
    let d = region.gap_jet(xp).value;
    if d <= 0.0 {
        return Err(Error::Geometry(format!("gap width {d} at x' = {xp:?}")));
    }
    let slack = 1e-9 * d;
    let (lo, hi) = (region.bottom(xp), region.top(xp));
    if x[region.dim()] < lo - slack || x[region.dim()] > hi + slack {
        return Err(Error::Domain(format!(
            "x_n = {} outside [{lo}, {hi}]",
            x[region.dim()]
        )));
    }
    Ok(())
}

/// Jet of `ū` over the physical coordinates, without domain checks.
pub fn ubar_jet(region: &NarrowRegion, x: &[f64]) -> Jet {
    let dim = region.dim();
    let n = region.n;
    let xp = &x[..dim];
    let h2 = region.profile.h2.jet(xp);
    let d = region.gap_jet(xp);
    // numerator x_n − h₂ + ε/2
    let mut num = Jet::constant(x[dim] - h2.value + 0.5 * region.epsilon);
    for a in 0..dim {
        num.grad[a] = -h2.grad[a];
        for b in 0..dim {
            num.hess[a][b] = -h2.hess[a][b];
        }
    }
    num.grad[dim] = 1.0;
    let u = num.value / d.value;
    let mut out = Jet::constant(u);
    for a in 0..n {
        out.grad[a] = (num.grad[a] - u * d.grad[a]) / d.value;
    }
    for a in 0..n {
        for b in 0..n {
            out.hess[a][b] = (num.hess[a][b]
                - out.grad[a] * d.grad[b]
                - out.grad[b] * d.grad[a]
                - u * d.hess[a][b])
                / d.value;
        }
    }
    out
}

/// `ū` at a point of the closed region, with derivatives up to `order`.
pub fn ubar(region: &NarrowRegion, x: &[f64], order: u8) -> Result<Jet> {
    check_point(region, x)?;
    Ok(truncate(ubar_jet(region, x), order))
}

/// Jet of component `l` of `ũ` given a precomputed `ū` jet.
pub fn utilde_component(data: &BoundaryData, l: usize, x: &[f64], ub: &Jet, n: usize) -> Jet {
    let dim = n - 1;
    let gp = data.g_plus[l].jet(x);
    let gm = data.g_minus[l].jet(x);
    let mut dg = Jet::constant(gp.value - gm.value);
    for a in 0..dim {
        dg.grad[a] = gp.grad[a] - gm.grad[a];
        for b in 0..dim {
            dg.hess[a][b] = gp.hess[a][b] - gm.hess[a][b];
        }
    }
    let mut out = Jet::constant(gm.value + dg.value * ub.value);
    for a in 0..n {
        out.grad[a] = gm.grad[a] + dg.grad[a] * ub.value + dg.value * ub.grad[a];
        for b in 0..n {
            out.hess[a][b] = gm.hess[a][b]
                + dg.hess[a][b] * ub.value
                + dg.grad[a] * ub.grad[b]
                + dg.grad[b] * ub.grad[a]
                + dg.value * ub.hess[a][b];
        }
    }
    out
}

/// `ũ_l`: the profile with only component `l` (zero-based) nonzero.
pub fn utilde(
    region: &NarrowRegion,
    data: &BoundaryData,
    l: usize,
    x: &[f64],
    order: u8,
) -> Result<Vec<Jet>> {
    check_point(region, x)?;
    if l >= data.ncomp() {
        return Err(Error::InvalidParameter(format!("component {} out of range", l + 1)));
    }
    let ub = ubar_jet(region, x);
    let mut out = vec![Jet::default(); data.ncomp()];
    out[l] = truncate(utilde_component(data, l, x, &ub, region.n), order);
    Ok(out)
}

/// The full profile `ũ = Σ_l ũ_l`, unchecked.
pub fn utilde_all(region: &NarrowRegion, data: &BoundaryData, x: &[f64]) -> Vec<Jet> {
    let ub = ubar_jet(region, x);
    (0..data.ncomp())
        .map(|l| utilde_component(data, l, x, &ub, region.n))
        .collect()
}

/// `f̃ⁱ = −∂_α(A ∂_β ũ + B ũ + C^α ũ) + ∂_β(C^β) ũ − D ũ`.
pub fn ftilde(
    op: &EllipticOperator,
    region: &NarrowRegion,
    data: &BoundaryData,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_point(region, x)?;
    if op.ncomp != data.ncomp() || op.n != region.n {
        return Err(Error::InvalidParameter("operator, region and data disagree".into()));
    }
    Ok(ftilde_unchecked(op, region, data, x))
}

pub(crate) fn ftilde_unchecked(
    op: &EllipticOperator,
    region: &NarrowRegion,
    data: &BoundaryData,
    x: &[f64],
) -> Vec<f64> {
    let (n, nc) = (op.n, op.ncomp);
    let u = utilde_all(region, data, x);
    let mut f = vec![0.0; nc];
    for (i, fi) in f.iter_mut().enumerate() {
        for (j, uj) in u.iter().enumerate() {
            let mut div = 0.0;
            for al in 0..n {
                for be in 0..n {
                    let p = &op.a[op.a_index(i, j, al, be)];
                    if !p.is_zero() {
                        let a = p.jet(x);
                        div += a.grad[al] * uj.grad[be] + a.value * uj.hess[al][be];
                    }
                }
                for p in [&op.b[op.b_index(i, j, al)], &op.c[op.b_index(i, j, al)]] {
                    if !p.is_zero() {
                        let b = p.jet(x);
                        div += b.grad[al] * uj.value + b.value * uj.grad[al];
                    }
                }
            }
            let mut rest = 0.0;
            for be in 0..n {
                let p = &op.c[op.b_index(i, j, be)];
                if !p.is_zero() {
                    rest += p.jet(x).grad[be] * uj.value;
                }
            }
            let dp = &op.d[i * nc + j];
            if !dp.is_zero() {
                rest -= dp.eval(x) * uj.value;
            }
            *fi += -div + rest;
        }
    }
    f
}

/// Smallest constants making each derivative-shape inequality hold over the
/// samples; `*_normal_second` entries are maxima of `|∂_{nn}·|`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BoundShapeReport {
    pub epsilon: f64,
    pub ubar_tangential: f64,
    pub ubar_normal_upper: f64,
    pub ubar_normal_lower: f64,
    pub ubar_tangential_second: f64,
    pub ubar_mixed: f64,
    pub ubar_normal_second: f64,
    pub utilde_tangential: f64,
    pub utilde_normal_upper: f64,
    pub utilde_normal_lower: f64,
    pub utilde_tangential_second: f64,
    pub utilde_mixed: f64,
    pub utilde_normal_second: f64,
}

/// `num/den` as a constraint on a constant: a zero numerator imposes nothing.
fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

fn sample_points(region: &NarrowRegion, samples: usize) -> Vec<Vec<f64>> {
    let samples = samples.max(3);
    let cols = ball_samples(region.dim(), samples, region.r_solve);
    let mut out = Vec::with_capacity(cols.len() * samples);
    for c in &cols {
        for k in 0..samples {
            out.push(region.physical_point(c, k as f64 / (samples - 1) as f64));
        }
    }
    out
}

/// Measures the derivative-shape constants for `ū` and each `ũ_l` over
/// `samples` points per axis of the closed solve region.
pub fn check_derivative_bounds(
    region: &NarrowRegion,
    data: &BoundaryData,
    samples: usize,
) -> BoundShapeReport {
    let (n, dim) = (region.n, region.dim());
    let g1 = data.plus_norms.grad + data.minus_norms.grad;
    let g2 = data.plus_norms.hess + data.minus_norms.hess;
    let mut rep = BoundShapeReport {
        epsilon: region.epsilon,
        ..Default::default()
    };
    let upd = |slot: &mut f64, v: f64| *slot = slot.max(v);
    for x in sample_points(region, samples) {
        let xp = &x[..dim];
        let rx = norm(xp);
        let r = region.epsilon + rx * rx;
        let ub = ubar_jet(region, &x);
        let tang = (0..dim).map(|a| ub.grad[a].powi(2)).sum::<f64>().sqrt();
        if rx > 0.0 {
            upd(&mut rep.ubar_tangential, ratio(tang * r, rx));
        } else {
            upd(&mut rep.ubar_tangential, ratio(tang, 0.0));
        }
        upd(&mut rep.ubar_normal_upper, ub.grad[dim].abs() * r);
        upd(&mut rep.ubar_normal_lower, ratio(1.0, ub.grad[dim].abs() * r));
        let mut tt = 0.0f64;
        let mut mixed = 0.0f64;
        for a in 0..dim {
            mixed = mixed.max(ub.hess[a][dim].abs());
            for b in 0..dim {
                tt = tt.max(ub.hess[a][b].abs());
            }
        }
        upd(&mut rep.ubar_tangential_second, tt * r);
        upd(&mut rep.ubar_mixed, ratio(mixed * r * r, rx));
        upd(&mut rep.ubar_normal_second, ub.hess[dim][dim].abs());

        for l in 0..data.ncomp() {
            let m = data.component_mismatch(l, xp).abs();
            let u = utilde_component(data, l, &x, &ub, n);
            let ut = (0..dim).map(|a| u.grad[a].powi(2)).sum::<f64>().sqrt();
            upd(&mut rep.utilde_tangential, ratio(ut, rx / r * m + g1));
            upd(&mut rep.utilde_normal_upper, ratio(u.grad[dim].abs() * r, m));
            upd(&mut rep.utilde_normal_lower, ratio(m, r * u.grad[dim].abs()));
            let mut tt = 0.0f64;
            let mut mixed = 0.0f64;
            for a in 0..dim {
                mixed = mixed.max(u.hess[a][dim].abs());
                for b in 0..dim {
                    tt = tt.max(u.hess[a][b].abs());
                }
            }
            upd(
                &mut rep.utilde_tangential_second,
                ratio(tt, m / r + (rx / r + 1.0) * g1 + g2),
            );
            upd(&mut rep.utilde_mixed, ratio(mixed, rx / (r * r) * m + g1 / r));
            upd(&mut rep.utilde_normal_second, u.hess[dim][dim].abs());
        }
    }
    rep
}

/// Smallest `C` with `|f̃| ≤ C[(1/r + |x'|/r²) M + (1 + |x'|)/r · G₁ + G₂]`,
/// `r = ε + |x'|²`, over the sampled points.
pub fn ftilde_shape_constant(
    op: &EllipticOperator,
    region: &NarrowRegion,
    data: &BoundaryData,
    samples: usize,
) -> f64 {
    let dim = region.dim();
    let g1 = data.plus_norms.grad + data.minus_norms.grad;
    let g2 = data.plus_norms.hess + data.minus_norms.hess;
    sample_points(region, samples)
        .iter()
        .map(|x| {
            let xp = &x[..dim];
            let rx = norm(xp);
            let r = region.epsilon + rx * rx;
            let m = data.mismatch(xp);
            let f = ftilde_unchecked(op, region, data, x);
            let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            ratio(fnorm, (1.0 / r + rx / (r * r)) * m + (1.0 + rx) / r * g1 + g2)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GapProfile;
    use crate::poly::parse_expression;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad(eps: f64) -> NarrowRegion {
        NarrowRegion::new(2, eps, GapProfile::quadratic(1)).unwrap()
    }

    fn flat(eps: f64) -> NarrowRegion {
        NarrowRegion::new(2, eps, GapProfile::flat(1))
            .unwrap()
            .allowing_degenerate(true)
    }

    fn expr(s: &str) -> PolynomialField {
        parse_expression(s, 1).unwrap()
    }

    fn random_points(region: &NarrowRegion, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let s = rng.gen_range(-0.8..0.8);
                region.physical_point(&[s], rng.gen_range(0.1..0.9))
            })
            .collect()
    }

    #[test]
    fn ubar_centre_value_and_flat_derivatives() {
        let r = quad(0.1);
        assert!((ubar(&r, &[0.0, 0.0], 0).unwrap().value - 0.5).abs() < 1e-15);
        let f = flat(0.1);
        let j = ubar(&f, &[0.3, 0.02], 2).unwrap();
        assert!((j.grad[1] - 10.0).abs() < 1e-12);
        assert_eq!(j.grad[0], 0.0);
        assert!(j.hess.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn ubar_boundary_values_and_range() {
        let r = quad(0.05);
        for s in [-0.9, -0.2, 0.0, 0.4, 1.0] {
            assert!((ubar(&r, &[s, r.top(&[s])], 0).unwrap().value - 1.0).abs() < 1e-15);
            assert!(ubar(&r, &[s, r.bottom(&[s])], 0).unwrap().value.abs() < 1e-15);
        }
        for x in random_points(&r, 100, 1) {
            let v = ubar(&r, &x, 0).unwrap().value;
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(ubar(&r, &[0.0, 0.2], 0).is_err());
    }

    #[test]
    fn normal_second_derivatives_vanish() {
        let r = quad(0.05);
        let data = BoundaryData::new(vec![expr("1 + x1^2")], vec![expr("x1 - 0.5")]).unwrap();
        for x in random_points(&r, 100, 2) {
            assert_eq!(ubar(&r, &x, 2).unwrap().hess[1][1], 0.0);
            assert!(utilde(&r, &data, 0, &x, 2).unwrap()[0].hess[1][1].abs() < 1e-12);
        }
    }

    #[test]
    fn utilde_reduces_to_ubar_and_matched_profile() {
        let r = quad(0.1);
        let unit = BoundaryData::constant(1, &[1.0], &[0.0]).unwrap();
        let matched = BoundaryData::new(vec![expr("x1^2 - x1")], vec![expr("x1^2 - x1")]).unwrap();
        for x in random_points(&r, 20, 3) {
            let u = utilde(&r, &unit, 0, &x, 2).unwrap()[0];
            let b = ubar(&r, &x, 2).unwrap();
            assert_eq!(u.grad[1], b.grad[1]);
            let m = utilde(&r, &matched, 0, &x, 2).unwrap()[0];
            assert!((m.value - (x[0] * x[0] - x[0])).abs() < 1e-14);
            assert!(m.grad[1].abs() < 1e-12);
        }
    }

    #[test]
    fn utilde_only_component_l_nonzero() {
        let r = quad(0.1);
        let d = BoundaryData::constant(1, &[1.0, 2.0], &[0.0, -1.0]).unwrap();
        let u = utilde(&r, &d, 1, &[0.1, 0.0], 1).unwrap();
        assert_eq!(u[0], Jet::default());
        assert!((u[1].value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ftilde_examples() {
        let lap = EllipticOperator::laplace(2).unwrap();
        let f = flat(0.1);
        let c = BoundaryData::constant(1, &[1.0], &[0.0]).unwrap();
        assert!(ftilde(&lap, &f, &c, &[0.2, 0.01]).unwrap()[0].abs() < 1e-12);
        // matched g: ũ = g(x') so f̃ = −g''
        let g = expr("x1^3 - 2*x1^2");
        let m = BoundaryData::new(vec![g.clone()], vec![g]).unwrap();
        for eps in [0.1, 0.01] {
            let r = quad(eps);
            let x = r.physical_point(&[0.3], 0.4);
            let v = ftilde(&lap, &r, &m, &x).unwrap()[0];
            assert!((v + (6.0 * 0.3 - 4.0)).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn ftilde_equals_minus_operator_applied_to_utilde() {
        let r = quad(0.05);
        let mut op = EllipticOperator::lame(2, 1.0, 1.0).unwrap();
        let (kb, kc) = (op.b_index(0, 1, 0), op.b_index(1, 0, 1));
        op.b[kb] = parse_expression("x1 + 0.5*x2", 2).unwrap();
        op.c[kc] = parse_expression("1 - x1^2", 2).unwrap();
        op.d[1] = parse_expression("0.3*x1*x2", 2).unwrap();
        let d = BoundaryData::new(vec![expr("1 + x1"), expr("x1^2")], vec![expr("0"), expr("-x1")]).unwrap();
        for x in random_points(&r, 20, 4) {
            let f = ftilde(&op, &r, &d, &x).unwrap();
            let lu = op.apply_jet(&x, &utilde_all(&r, &d, &x));
            for i in 0..2 {
                assert!((f[i] + lu[i]).abs() < 1e-9 * (1.0 + lu[i].abs()), "{} vs {}", f[i], lu[i]);
            }
        }
    }

    /// Central-difference errors at steps h and h/2; returns the observed order.
    fn fd_order(f: impl Fn(f64) -> f64, exact: f64, h: f64) -> (f64, f64) {
        let e1 = ((f(h) - f(-h)) / (2.0 * h) - exact).abs();
        let e2 = ((f(h / 2.0) - f(-h / 2.0)) / h - exact).abs();
        (e2, (e1 / e2).log2())
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let r = quad(0.05);
        let op = EllipticOperator::laplace(2).unwrap();
        let d = BoundaryData::new(vec![expr("1 + x1 + x1^3")], vec![expr("x1^2 - 0.2")]).unwrap();
        let mut orders = Vec::new();
        for x in random_points(&r, 100, 5) {
            let ub = ubar_jet(&r, &x);
            let ut = utilde_all(&r, &d, &x)[0];
            for a in 0..2 {
                let h = if a == 0 { 1e-3 } else { 1e-3 * r.gap_jet(&x[..1]).value };
                let shift = |dx: f64| {
                    let mut y = x.clone();
                    y[a] += dx;
                    y
                };
                for (val, exact) in [
                    (Box::new(|dx: f64| ubar_jet(&r, &shift(dx)).value) as Box<dyn Fn(f64) -> f64>, ub.grad[a]),
                    (Box::new(|dx: f64| ubar_jet(&r, &shift(dx)).grad[0]), ub.hess[0][a]),
                    (Box::new(|dx: f64| utilde_all(&r, &d, &shift(dx))[0].value), ut.grad[a]),
                    (Box::new(|dx: f64| utilde_all(&r, &d, &shift(dx))[0].grad[1]), ut.hess[1][a]),
                ] {
                    let (err, order) = fd_order(&val, exact, h);
                    let scale = exact.abs().max(1.0);
                    if err > 1e-9 * scale {
                        orders.push(order);
                    }
                }
            }
            // f̃ = −(ũ_11 + ũ_22) against a 5-point second difference of ũ
            let f = ftilde_unchecked(&op, &r, &d, &x)[0];
            let lap_fd = |h: f64| {
                let k = r.gap_jet(&x[..1]).value;
                let mut acc = 0.0;
                for (a, step) in [(0, h), (1, h * k)] {
                    let mut p = x.clone();
                    let mut m = x.clone();
                    p[a] += step;
                    m[a] -= step;
                    let up = utilde_all(&r, &d, &p)[0].value;
                    let um = utilde_all(&r, &d, &m)[0].value;
                    acc += (up - 2.0 * ut.value + um) / (step * step);
                }
                acc
            };
            let e1 = (-lap_fd(1e-2) - f).abs();
            let e2 = (-lap_fd(5e-3) - f).abs();
            if e2 > 1e-7 * f.abs().max(1.0) {
                orders.push((e1 / e2).log2());
            }
        }
        assert!(!orders.is_empty());
        for o in &orders {
            assert!((o - 2.0).abs() < 0.2, "observed order {o}");
        }
    }

    #[test]
    fn derivative_shape_constants() {
        let unit = BoundaryData::constant(1, &[1.0], &[0.0]).unwrap();
        let reps: Vec<_> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&e| check_derivative_bounds(&quad(e), &unit, 41))
            .collect();
        for rep in &reps {
            assert!(rep.ubar_normal_second < 1e-9 && rep.utilde_normal_second < 1e-9);
            // ∂_n ū = 1/(ε + x²) on the quadratic gap
            assert!((rep.utilde_normal_upper - 1.0).abs() < 1e-12);
            assert!((rep.utilde_normal_lower - 1.0).abs() < 1e-12);
        }
        let fields: [fn(&BoundShapeReport) -> f64; 10] = [
            |r| r.ubar_tangential,
            |r| r.ubar_normal_upper,
            |r| r.ubar_normal_lower,
            |r| r.ubar_tangential_second,
            |r| r.ubar_mixed,
            |r| r.utilde_tangential,
            |r| r.utilde_normal_upper,
            |r| r.utilde_normal_lower,
            |r| r.utilde_tangential_second,
            |r| r.utilde_mixed,
        ];
        for (k, get) in fields.iter().enumerate() {
            let v: Vec<f64> = reps.iter().map(get).collect();
            let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
            assert!(lo > 0.0 && (hi - lo) / hi < 0.1, "field {k}: {v:?}");
        }
        let matched = BoundaryData::new(vec![expr("x1")], vec![expr("x1")]).unwrap();
        assert_eq!(check_derivative_bounds(&quad(0.1), &matched, 21).utilde_normal_upper, 0.0);
    }

    #[test]
    fn ftilde_shape_constant_is_sweep_stable() {
        let op = EllipticOperator::laplace(2).unwrap();
        let d = BoundaryData::constant(1, &[1.0], &[0.0]).unwrap();
        let c: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&e| ftilde_shape_constant(&op, &quad(e), &d, 41))
            .collect();
        let (lo, hi) = (c.iter().cloned().fold(f64::INFINITY, f64::min), c.iter().cloned().fold(0.0, f64::max));
        assert!(lo > 0.0 && hi / lo < 1.5, "{c:?}");
    }

    #[test]
    fn data_helpers() {
        let d = BoundaryData::constant(1, &[3.0, 1.0], &[0.0, 5.0]).unwrap();
        assert_eq!(d.mismatch(&[0.0]), 5.0);
        assert_eq!(d.max_component_mismatch(&[0.0]), 4.0);
        let c = d.component(1).unwrap();
        assert_eq!(c.mismatch(&[0.2]), 4.0);
        assert!(d.component(2).is_err());
        assert_eq!(d.plus_norms.c2, 10f64.sqrt());
    }
}
