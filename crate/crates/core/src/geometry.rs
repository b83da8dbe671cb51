//! The narrow region, its boundary graphs and the gap function.
//!
//! Tangential points `x'` are slices of length `n - 1`; physical points are
//! slices of length `n` with `x_n` last.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::poly::{Jet, PolynomialField};

/// Slack for domain checks on points that sit on a boundary up to rounding.
const DOMAIN_SLACK: f64 = 1e-12;

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Uniform samples of the closed ball of radius `radius` in `dim` dimensions,
/// taken from the tensor grid with `per_dim` points per axis.
pub fn ball_samples(dim: usize, per_dim: usize, radius: f64) -> Vec<Vec<f64>> {
    assert!(per_dim >= 2 && (1..=3).contains(&dim));
    let coord = |i: usize| -radius + 2.0 * radius * i as f64 / (per_dim - 1) as f64;
    let mut out = Vec::new();
    let total = per_dim.pow(dim as u32);
    for flat in 0..total {
        let mut rem = flat;
        let mut p = Vec::with_capacity(dim);
        for _ in 0..dim {
            p.push(coord(rem % per_dim));
            rem /= per_dim;
        }
        if norm(&p) <= radius * (1.0 + DOMAIN_SLACK) {
            out.push(p);
        }
    }
    out
}

/// `|p| + |∇p| + |∇²p|` at a point (Euclidean and Frobenius norms).
pub fn c2_pointwise(j: &Jet, dim: usize) -> f64 {
    let g = (0..dim).map(|a| j.grad[a] * j.grad[a]).sum::<f64>().sqrt();
    let h = (0..dim)
        .flat_map(|a| (0..dim).map(move |b| (a, b)))
        .map(|(a, b)| j.hess[a][b] * j.hess[a][b])
        .sum::<f64>()
        .sqrt();
    j.value.abs() + g + h
}

/// Sampled lower bound for the C² norm of `p` over the given points.
pub fn c2_norm_sampled(p: &PolynomialField, points: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|x| c2_pointwise(&p.jet(x), p.n_vars()))
        .fold(0.0, f64::max)
}

fn min_eigenvalue(hess: &[[f64; 3]; 3], dim: usize) -> f64 {
    let m = DMatrix::from_fn(dim, dim, |a, b| hess[a][b]);
    SymmetricEigen::new(m).eigenvalues.min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapProfile {
    pub h1: PolynomialField,
    pub h2: PolynomialField,
    /// Strict-convexity constant: lower bound for `∇²(h₁ − h₂)(0')`.
    pub kappa0: f64,
    /// Bound for `‖h₁‖_{C²} + ‖h₂‖_{C²}` on the unit ball.
    pub kappa1: f64,
}

/// Values and derivatives of both graphs at one tangential point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileEval {
    pub h1: Jet,
    pub h2: Jet,
}

impl GapProfile {
    /// Profile whose constants are the measured ones (exact Hessian at the
    /// origin, C² norm from dense sampling).
    pub fn new(h1: PolynomialField, h2: PolynomialField) -> Result<Self> {
        if h1.n_vars() != h2.n_vars() || h1.n_vars() == 0 || h1.n_vars() > 2 {
            return Err(Error::InvalidParameter(
                "profiles must share 1 or 2 tangential variables".into(),
            ));
        }
        h1.check_degree()?;
        h2.check_degree()?;
        let mut p = GapProfile {
            h1,
            h2,
            kappa0: 0.0,
            kappa1: 0.0,
        };
        p.kappa0 = p.origin_min_eigenvalue().max(0.0);
        let pts = ball_samples(p.dim(), 160, 1.0);
        p.kappa1 = c2_norm_sampled(&p.h1, &pts) + c2_norm_sampled(&p.h2, &pts);
        Ok(p)
    }

    pub fn with_constants(mut self, kappa0: f64, kappa1: f64) -> Result<Self> {
        if !(kappa0.is_finite() && kappa1.is_finite() && kappa0 >= 0.0 && kappa1 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa0={kappa0}, kappa1={kappa1} must be finite and non-negative"
            )));
        }
        self.kappa0 = kappa0;
        self.kappa1 = kappa1;
        Ok(self)
    }

    /// `h₁ = |x'|²/2`, `h₂ = −|x'|²/2`.
    pub fn quadratic(dim: usize) -> Self {
        let mut sq = PolynomialField::zero(dim);
        for a in 0..dim {
            let v = PolynomialField::var(dim, a);
            sq = sq.add(&v.mul(&v));
        }
        let half = sq.scale_f64(0.5).expect("finite");
        Self::new(half.clone(), half.neg()).expect("valid quadratic profile")
    }

    /// `h₁ = h₂ = 0`; violates strict convexity.
    pub fn flat(dim: usize) -> Self {
        Self::new(PolynomialField::zero(dim), PolynomialField::zero(dim)).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.h1.n_vars()
    }

    /// Smallest eigenvalue of `∇²(h₁ − h₂)(0')`.
    pub fn origin_min_eigenvalue(&self) -> f64 {
        let zero = [0.0; 3];
        let (j1, j2) = (self.h1.jet(&zero), self.h2.jet(&zero));
        let mut h = [[0.0; 3]; 3];
        for a in 0..self.dim() {
            for b in 0..self.dim() {
                h[a][b] = j1.hess[a][b] - j2.hess[a][b];
            }
        }
        min_eigenvalue(&h, self.dim())
    }

    /// Exact evaluation at `x'`; derivatives above `order` are zeroed.
    pub fn eval_profile(&self, x_prime: &[f64], order: u8) -> Result<ProfileEval> {
        if x_prime.len() != self.dim() {
            return Err(Error::InvalidParameter(format!(
                "expected a point with {} coordinates",
                self.dim()
            )));
        }
        if order > 2 {
            return Err(Error::InvalidParameter(format!("order {order} > 2")));
        }
        if norm(x_prime) > 1.0 + DOMAIN_SLACK {
            return Err(Error::Domain(format!("|x'| = {} > 1", norm(x_prime))));
        }
        let trim = |mut j: Jet| {
            if order < 2 {
                j.hess = Default::default();
            }
            if order < 1 {
                j.grad = Default::default();
            }
            j
        };
        Ok(ProfileEval {
            h1: trim(self.h1.jet(x_prime)),
            h2: trim(self.h2.jet(x_prime)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarrowRegion {
    pub n: usize,
    pub epsilon: f64,
    pub profile: GapProfile,
    pub r_solve: f64,
    pub r_analyze: f64,
    /// Accept profiles that fail the strict-convexity hypothesis.
    pub allow_degenerate: bool,
}

impl NarrowRegion {
    pub fn new(n: usize, epsilon: f64, profile: GapProfile) -> Result<Self> {
        Self::with_radii(n, epsilon, profile, 1.0, 0.5)
    }

    pub fn with_radii(
        n: usize,
        epsilon: f64,
        profile: GapProfile,
        r_solve: f64,
        r_analyze: f64,
    ) -> Result<Self> {
        if !(n == 2 || n == 3) {
            return Err(Error::InvalidParameter(format!("dimension n={n} not in {{2,3}}")));
        }
        if profile.dim() != n - 1 {
            return Err(Error::InvalidParameter(format!(
                "profile has {} variables, expected {}",
                profile.dim(),
                n - 1
            )));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon={epsilon} must be positive")));
        }
        if !(0.0 < r_analyze && r_analyze < r_solve && r_solve <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "radii must satisfy 0 < r_analyze ({r_analyze}) < r_solve ({r_solve}) <= 1"
            )));
        }
        Ok(NarrowRegion {
            n,
            epsilon,
            profile,
            r_solve,
            r_analyze,
            allow_degenerate: false,
        })
    }

    pub fn allowing_degenerate(mut self, allow: bool) -> Self {
        self.allow_degenerate = allow;
        self
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut r = Self::with_radii(
            self.n,
            epsilon,
            self.profile.clone(),
            self.r_solve,
            self.r_analyze,
        )?;
        r.allow_degenerate = self.allow_degenerate;
        Ok(r)
    }

    /// Number of tangential variables.
    pub fn dim(&self) -> usize {
        self.n - 1
    }

    /// `δ(x') = ε + h₁(x') − h₂(x')` with its derivatives; no domain check.
    pub fn gap_jet(&self, x_prime: &[f64]) -> Jet {
        let (j1, j2) = (self.profile.h1.jet(x_prime), self.profile.h2.jet(x_prime));
        let mut j = Jet::constant(self.epsilon + j1.value - j2.value);
        for a in 0..3 {
            j.grad[a] = j1.grad[a] - j2.grad[a];
            for b in 0..3 {
                j.hess[a][b] = j1.hess[a][b] - j2.hess[a][b];
            }
        }
        j
    }

    pub fn gap_width(&self, x_prime: &[f64]) -> Result<f64> {
        if norm(x_prime) > self.r_solve * (1.0 + DOMAIN_SLACK) {
            return Err(Error::Domain(format!(
                "|x'| = {} outside B_{}",
                norm(x_prime),
                self.r_solve
            )));
        }
        Ok(self.gap_jet(x_prime).value)
    }

    /// Lower graph `−ε/2 + h₂(x')`.
    pub fn bottom(&self, x_prime: &[f64]) -> f64 {
        -0.5 * self.epsilon + self.profile.h2.eval(x_prime)
    }

    /// Upper graph `ε/2 + h₁(x')`.
    pub fn top(&self, x_prime: &[f64]) -> f64 {
        0.5 * self.epsilon + self.profile.h1.eval(x_prime)
    }

    /// Physical point at tangential position `x'` and normalized height `t`.
    pub fn physical_point(&self, x_prime: &[f64], t: f64) -> Vec<f64> {
        let mut x = x_prime.to_vec();
        x.push(self.bottom(x_prime) + t * self.gap_jet(x_prime).value);
        x
    }

    /// Window `{x ∈ Ω_{r_analyze} : |x' − x0'| < s}`, defaulting to `s = δ(x0')`.
    pub fn window(&self, x0_prime: &[f64], s: Option<f64>) -> Result<LocalWindow> {
        if x0_prime.len() != self.dim() {
            return Err(Error::InvalidParameter("window centre has wrong dimension".into()));
        }
        let s = match s {
            Some(s) => s,
            None => self.gap_width(x0_prime)?,
        };
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidParameter(format!("window radius {s} must be positive")));
        }
        if norm(x0_prime) + s > self.r_solve * (1.0 + DOMAIN_SLACK) {
            return Err(Error::Domain(format!(
                "window |x0'| + s = {} exits the solve domain of radius {}",
                norm(x0_prime) + s,
                self.r_solve
            )));
        }
        Ok(LocalWindow {
            x0_prime: x0_prime.to_vec(),
            s,
        })
    }
}

/// Mapping data of one vertical column `x' = s`,
/// `x_n = −ε/2 + h₂(s) + t δ(s)`.
///
/// Converts derivatives in `(s, t)` into physical derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnMetric {
    pub dim: usize,
    pub bottom: f64,
    pub delta: Jet,
    pub h2: Jet,
}

impl ColumnMetric {
    pub fn new(region: &NarrowRegion, x_prime: &[f64]) -> Self {
        let h2 = region.profile.h2.jet(x_prime);
        ColumnMetric {
            dim: region.dim(),
            bottom: -0.5 * region.epsilon + h2.value,
            delta: region.gap_jet(x_prime),
            h2,
        }
    }

    pub fn x_n(&self, t: f64) -> f64 {
        self.bottom + t * self.delta.value
    }

    /// `∂x_n/∂s_α` at height `t`.
    pub fn slope(&self, alpha: usize, t: f64) -> f64 {
        self.h2.grad[alpha] + t * self.delta.grad[alpha]
    }

    /// Physical gradient (tangential entries, then `x_n`) from `∂_s u` and `∂_t u`.
    pub fn physical_gradient(&self, t: f64, u_s: &[f64; 3], u_t: f64) -> [f64; 3] {
        let d = self.delta.value;
        let mut g = [0.0; 3];
        for a in 0..self.dim {
            g[a] = u_s[a] - self.slope(a, t) / d * u_t;
        }
        g[self.dim] = u_t / d;
        g
    }

    /// Physical Hessian from computational derivatives (`∂_s u` does not enter).
    pub fn physical_hessian(
        &self,
        t: f64,
        u_t: f64,
        u_ss: &[[f64; 3]; 3],
        u_st: &[f64; 3],
        u_tt: f64,
    ) -> [[f64; 3]; 3] {
        let n = self.dim;
        let d = self.delta.value;
        let r = 1.0 / d;
        let mut q = [0.0; 3];
        for a in 0..n {
            q[a] = self.slope(a, t) * r;
        }
        let mut h = [[0.0; 3]; 3];
        h[n][n] = r * r * u_tt;
        for a in 0..n {
            let dr = -self.delta.grad[a] * r * r;
            let v = dr * u_t + r * (u_st[a] - q[a] * u_tt);
            h[a][n] = v;
            h[n][a] = v;
            for b in 0..n {
                // ∂_{x_b} q_a = ∂_{s_b} q_a − q_b ∂_t q_a
                let dm = self.h2.hess[a][b] + t * self.delta.hess[a][b];
                let ds_q = (dm * d - self.slope(a, t) * self.delta.grad[b]) * r * r;
                let dt_q = self.delta.grad[a] * r;
                let dq = ds_q - q[b] * dt_q;
                h[a][b] = u_ss[a][b] - q[b] * u_st[a] - q[a] * u_st[b] + q[a] * q[b] * u_tt
                    - dq * u_t;
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalWindow {
    pub x0_prime: Vec<f64>,
    pub s: f64,
}

impl LocalWindow {
    /// Whether the column at `x'` lies in the window (the `Ω_{r_analyze}` cut
    /// is applied by the caller).
    pub fn contains(&self, x_prime: &[f64]) -> bool {
        let d: Vec<f64> = x_prime
            .iter()
            .zip(&self.x0_prime)
            .map(|(a, b)| a - b)
            .collect();
        norm(&d) < self.s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
    pub min_eigenvalue: f64,
    /// Sampled `‖h₁‖_{C²} + ‖h₂‖_{C²}` on the unit ball.
    pub c2_norm: f64,
    /// `min δ(x')/(ε+|x'|²)` over samples of the solve ball.
    pub c1: f64,
    /// `max δ(x')/(ε+|x'|²)` over samples of the solve ball.
    pub c2: f64,
    pub min_gap: f64,
    pub degenerate_override: bool,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Passed, or only the convexity check failed under the override.
    pub fn accepted(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c.passed || (self.degenerate_override && c.name == "strict_convexity"))
    }

    pub fn require(&self) -> Result<()> {
        if self.accepted() {
            return Ok(());
        }
        let failed: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} ({})", c.name, c.detail))
            .collect();
        Err(Error::Hypothesis(failed.join("; ")))
    }

    /// Comparability constant `C` with `δ/(ε+|x'|²) ∈ [1/C, C]`.
    pub fn comparability_constant(&self) -> f64 {
        self.c2.max(1.0 / self.c1)
    }
}

/// Checks the geometric hypotheses on a region.
///
/// A non-positive gap anywhere on the solve ball is a hard error; failed
/// hypotheses are recorded in the report.
pub fn validate_profile(
    region: &NarrowRegion,
    samples_per_dim: usize,
    tol: f64,
) -> Result<ValidationReport> {
    if samples_per_dim < 16 {
        return Err(Error::InvalidParameter(format!(
            "samples_per_dim={samples_per_dim} < 16"
        )));
    }
    let p = &region.profile;
    let dim = p.dim();
    let zero = vec![0u32; dim];
    let mut checks = Vec::new();

    let values_zero = p.h1.coefficient(&zero) == Default::default()
        && p.h2.coefficient(&zero) == Default::default();
    checks.push(HypothesisCheck {
        name: "origin_values".into(),
        passed: values_zero,
        detail: format!(
            "h1(0')={}, h2(0')={}",
            p.h1.eval(&[0.0; 3]) + 0.0,
            p.h2.eval(&[0.0; 3]) + 0.0
        ),
    });

    let linear_zero = (0..dim).all(|a| {
        let mut e = zero.clone();
        e[a] = 1;
        p.h1.coefficient(&e) == Default::default() && p.h2.coefficient(&e) == Default::default()
    });
    checks.push(HypothesisCheck {
        name: "origin_gradients".into(),
        passed: linear_zero,
        detail: "linear coefficients of h1, h2".into(),
    });

    let min_eig = p.origin_min_eigenvalue();
    let convex = min_eig > tol && min_eig >= p.kappa0 - tol;
    checks.push(HypothesisCheck {
        name: "strict_convexity".into(),
        passed: convex,
        detail: format!("min eigenvalue {min_eig} vs kappa0 {}", p.kappa0),
    });

    let dense = ball_samples(dim, 10 * samples_per_dim, 1.0);
    let c2 = c2_norm_sampled(&p.h1, &dense) + c2_norm_sampled(&p.h2, &dense);
    checks.push(HypothesisCheck {
        name: "c2_bound".into(),
        passed: c2 <= p.kappa1 * (1.0 + tol) + tol,
        detail: format!("sampled C2 norm {c2} vs kappa1 {}", p.kappa1),
    });

    let solve_pts = ball_samples(dim, 10 * samples_per_dim, region.r_solve);
    let mut min_gap = f64::INFINITY;
    let (mut c1, mut c2c) = (f64::INFINITY, 0.0f64);
    for x in &solve_pts {
        let d = region.gap_jet(x).value;
        min_gap = min_gap.min(d);
        let r2: f64 = x.iter().map(|a| a * a).sum();
        let ratio = d / (region.epsilon + r2);
        c1 = c1.min(ratio);
        c2c = c2c.max(ratio);
    }
    if min_gap <= 0.0 || !min_gap.is_finite() {
        return Err(Error::Geometry(format!(
            "gap width {min_gap} is not positive on the solve ball"
        )));
    }
    checks.push(HypothesisCheck {
        name: "gap_positive".into(),
        passed: true,
        detail: format!("min gap {min_gap}"),
    });

    Ok(ValidationReport {
        checks,
        min_eigenvalue: min_eig,
        c2_norm: c2,
        c1,
        c2: c2c,
        min_gap,
        degenerate_override: region.allow_degenerate,
    })
}
