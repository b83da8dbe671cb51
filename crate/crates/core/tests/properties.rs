//! Property tests for the module invariants.

use narrowgap::analysis::{bound_report, local_energy_profile, SolvedCase, DEFAULT_R0};
use narrowgap::auxiliary::{ftilde, ubar, utilde_all, BoundaryData};
use narrowgap::geometry::{validate_profile, GapProfile, NarrowRegion};
use narrowgap::mesh_solver::{
    boundary_values, build_grid, dof, solve, ColumnKind, LateralClosure, MappedGrid, SolverOptions,
};
use narrowgap::operators::{estimate_ellipticity, CoefficientValues, EllipticOperator};
use narrowgap::verification::flat_gap_exact;
use narrowgap::{Jet, PolynomialField};
use proptest::prelude::*;

fn x(k: usize, n: usize) -> PolynomialField {
    PolynomialField::var(n, k)
}

fn c(n: usize, v: f64) -> PolynomialField {
    PolynomialField::constant_f64(n, v).unwrap()
}

/// `Σ coef_k · x1^k`.
fn poly1(coefs: &[f64]) -> PolynomialField {
    let mut p = c(1, 0.0);
    for (k, &a) in coefs.iter().enumerate() {
        p = p.add(&x(0, 1).pow(k as u32).scale_f64(a).unwrap());
    }
    p
}

/// `h₁ = a x1²`, `h₂ = −b x1²`.
fn profile(a: f64, b: f64) -> GapProfile {
    let sq = x(0, 1).pow(2);
    GapProfile::new(sq.scale_f64(a).unwrap(), sq.scale_f64(-b).unwrap()).unwrap()
}

fn region(eps: f64, a: f64, b: f64) -> NarrowRegion {
    NarrowRegion::new(2, eps, profile(a, b)).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn solve_case(op: &EllipticOperator, r: &NarrowRegion, data: &BoundaryData, nx: usize, nt: usize) -> SolvedCase {
    let grid = build_grid(r, nx, nt).unwrap();
    let u = solve(op, &grid, data, LateralClosure::Utilde, &SolverOptions::default()).unwrap();
    SolvedCase::new(grid, u, data)
}

fn dirichlet(grid: &MappedGrid, col: usize, it: usize) -> bool {
    grid.columns[col].kind == ColumnKind::Lateral || it == 0 || it + 1 == grid.nt
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gap_comparability_constants_are_sweep_stable(
        eps in 0.001f64..0.05, a in 0.2f64..2.0, b in 0.2f64..2.0, s in -1.0f64..1.0,
    ) {
        let r1 = region(eps, a, b);
        let r2 = region(eps / 2.0, a, b);
        let v1 = validate_profile(&r1, 16, 1e-9).unwrap();
        let v2 = validate_profile(&r2, 16, 1e-9).unwrap();
        prop_assert!(rel(v1.c1, v2.c1) < 0.05 && rel(v1.c2, v2.c2) < 0.05);
        // δ/(ε+s²) is monotone in s² between 1 and (ε+a+b)/(ε+1)
        let edge = (eps + a + b) / (eps + 1.0);
        let (lo, hi) = (edge.min(1.0), edge.max(1.0));
        prop_assert!(v1.c1 >= lo * (1.0 - 1e-12) && v1.c2 <= hi * (1.0 + 1e-12));
        let d = r1.gap_width(&[s]).unwrap();
        let base = eps + s * s;
        prop_assert!(d >= lo * base * (1.0 - 1e-12) && d <= hi * base * (1.0 + 1e-12));
        prop_assert_eq!(validate_profile(&r1, 16, 1e-9).unwrap(), v1);
    }

    #[test]
    fn polynomial_jets_match_central_differences(
        coefs in prop::collection::vec(-2.0f64..2.0, 6), p in prop::array::uniform2(-0.8f64..0.8),
    ) {
        let n = 2;
        let monomials = [
            c(n, 1.0), x(0, n), x(1, n), x(0, n).pow(2).mul(&x(1, n)), x(1, n).pow(3), x(0, n).pow(3),
        ];
        let mut f = c(n, 0.0);
        for (m, &k) in monomials.iter().zip(&coefs) {
            f = f.add(&m.scale_f64(k).unwrap());
        }
        let j = f.jet(&p);
        for a in 0..n {
            let fd = |h: f64, g: &dyn Fn(&[f64]) -> f64| {
                let mut up = p;
                let mut dn = p;
                up[a] += h;
                dn[a] -= h;
                (g(&up) - g(&dn)) / (2.0 * h)
            };
            let val = |y: &[f64]| f.eval(y);
            let e1 = (fd(1e-2, &val) - j.grad[a]).abs();
            let e2 = (fd(5e-3, &val) - j.grad[a]).abs();
            if e2 > 1e-9 {
                prop_assert!(((e1 / e2).log2() - 2.0).abs() < 0.2, "order {}", (e1 / e2).log2());
            }
            for b in 0..n {
                let gb = |y: &[f64]| f.jet(y).grad[b];
                let e1 = (fd(1e-2, &gb) - j.hess[b][a]).abs();
                let e2 = (fd(5e-3, &gb) - j.hess[b][a]).abs();
                if e2 > 1e-9 {
                    prop_assert!(((e1 / e2).log2() - 2.0).abs() < 0.2);
                }
            }
        }
    }

    #[test]
    fn identity_shift_raises_ellipticity_by_exactly_c(shift in 0.0f64..5.0, seed in 0u64..1000, lame in any::<bool>()) {
        let op = if lame { EllipticOperator::lame(2, 1.0, 1.0).unwrap() } else { EllipticOperator::laplace(2).unwrap() };
        let r = region(0.1, 0.5, 0.5);
        let base = estimate_ellipticity(&op, &r, 9, 5, 32, seed).unwrap();
        let shifted = estimate_ellipticity(&op.shifted_by_identity(shift).unwrap(), &r, 9, 5, 32, seed).unwrap();
        prop_assert!((shifted - base - shift).abs() < 1e-9 * (1.0 + shifted.abs()));
    }

    #[test]
    fn rescaled_coefficients_equal_composed_evaluation(
        x0 in prop::array::uniform2(-0.5f64..0.5), delta in 0.01f64..1.0, y in prop::array::uniform2(-1.0f64..1.0),
        k in -2.0f64..2.0,
    ) {
        let n = 2;
        let mut op = EllipticOperator::lame(n, 1.0, 1.0).unwrap();
        let ia = op.a_index(0, 1, 0, 1);
        op.a[ia] = op.a[ia].add(&x(0, n).mul(&x(1, n)).scale_f64(k).unwrap());
        let ib = op.b_index(1, 0, 1);
        op.b[ib] = x(0, n).pow(2).add(&c(n, k));
        op.c[0] = x(1, n).scale_f64(k).unwrap();
        op.d[3] = x(0, n).add(&x(1, n).pow(2));
        let x0v = [x0[0], 0.0];
        let hat = op.rescale_coefficients(&x0v, delta).unwrap();
        let phys = [x0v[0] + delta * y[0], delta * y[1]];
        let (mut direct, mut scaled) = (CoefficientValues::default(), CoefficientValues::default());
        op.eval_coefficients(&phys, &mut direct);
        hat.eval_coefficients(&y, &mut scaled);
        for (u, v) in direct.a.iter().zip(&scaled.a) {
            prop_assert!((u - v).abs() < 1e-12 * (1.0 + u.abs()));
        }
        for (u, v) in direct.b.iter().zip(&scaled.b) {
            prop_assert!((delta * u - v).abs() < 1e-12 * (1.0 + u.abs()));
        }
        for (u, v) in direct.c.iter().zip(&scaled.c) {
            prop_assert!((delta * u - v).abs() < 1e-12 * (1.0 + u.abs()));
        }
        for (u, v) in direct.d.iter().zip(&scaled.d) {
            prop_assert!((delta * delta * u - v).abs() < 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn builtin_operators_are_symmetric(p in prop::array::uniform3(-1.0f64..1.0), lambda in 0.0f64..3.0, mu in 0.1f64..3.0) {
        for n in [2usize, 3] {
            let op = EllipticOperator::lame(n, lambda, mu).unwrap();
            let mut v = CoefficientValues::default();
            op.eval_coefficients(&p[..n], &mut v);
            for i in 0..n {
                for j in 0..n {
                    for al in 0..n {
                        for be in 0..n {
                            prop_assert_eq!(v.a[op.a_index(i, j, al, be)], v.a[op.a_index(j, i, be, al)]);
                        }
                    }
                }
            }
            let lap = EllipticOperator::laplace(n).unwrap();
            lap.eval_coefficients(&p[..n], &mut v);
            for al in 0..n {
                for be in 0..n {
                    prop_assert_eq!(v.a[lap.a_index(0, 0, al, be)], if al == be { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn ubar_boundary_values_and_range(eps in 0.005f64..0.2, a in 0.2f64..2.0, b in 0.2f64..2.0, s in -1.0f64..1.0, t in 0.0f64..1.0) {
        let r = region(eps, a, b);
        prop_assert!((ubar(&r, &[s, r.top(&[s])], 0).unwrap().value - 1.0).abs() < 1e-13);
        prop_assert!(ubar(&r, &[s, r.bottom(&[s])], 0).unwrap().value.abs() < 1e-13);
        let v = ubar(&r, &r.physical_point(&[s], t), 0).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn matched_data_gives_tangential_profile(
        g1 in prop::collection::vec(-2.0f64..2.0, 4), g2 in prop::collection::vec(-2.0f64..2.0, 4),
        s in -0.9f64..0.9, t in 0.0f64..1.0, lambda in 0.0f64..2.0, mu in 0.1f64..2.0,
    ) {
        let r = region(0.05, 0.5, 0.5);
        let (p1, p2) = (poly1(&g1), poly1(&g2));
        let pt = r.physical_point(&[s], t);
        let d1 = p1.derivative(0).derivative(0).eval(&[s]);
        let d2 = p2.derivative(0).derivative(0).eval(&[s]);

        let scalar = BoundaryData::new(vec![p1.clone()], vec![p1.clone()]).unwrap();
        let u = utilde_all(&r, &scalar, &pt)[0];
        prop_assert!(u.grad[1].abs() < 1e-12 && (u.value - p1.eval(&[s])).abs() < 1e-12);
        let f = ftilde(&EllipticOperator::laplace(2).unwrap(), &r, &scalar, &pt).unwrap();
        prop_assert!((f[0] + d1).abs() < 1e-9 * (1.0 + d1.abs()));

        // μΔu + (λ+μ)∇(∇·u) with u = (g1(x1), g2(x1))
        let vector = BoundaryData::new(vec![p1.clone(), p2.clone()], vec![p1, p2]).unwrap();
        let f = ftilde(&EllipticOperator::lame(2, lambda, mu).unwrap(), &r, &vector, &pt).unwrap();
        let e1 = -(lambda + 2.0 * mu) * d1;
        let e2 = -mu * d2;
        prop_assert!((f[0] - e1).abs() < 1e-9 * (1.0 + e1.abs()));
        prop_assert!((f[1] - e2).abs() < 1e-9 * (1.0 + e2.abs()));
    }

    #[test]
    fn flat_gap_exact_solves_the_constant_coefficient_problem(
        eps in 0.01f64..0.2, a in prop::array::uniform2(-3.0f64..3.0), b in prop::array::uniform2(-3.0f64..3.0),
        s in -1.0f64..1.0, t in 0.0f64..1.0,
    ) {
        let xn = -eps / 2.0 + t * eps;
        let close = |u: Vec<f64>, v: &[f64; 2]| u.iter().zip(v).all(|(p, q)| (p - q).abs() < 1e-14 * (1.0 + q.abs()));
        prop_assert!(close(flat_gap_exact(eps, &a, &b, &[s, eps / 2.0]), &a));
        prop_assert!(close(flat_gap_exact(eps, &a, &b, &[s, -eps / 2.0]), &b));
        let vals = flat_gap_exact(eps, &a, &b, &[s, xn]);
        let jets: Vec<Jet> = (0..2)
            .map(|l| {
                let mut j = Jet::constant(vals[l]);
                j.grad[1] = (a[l] - b[l]) / eps;
                j
            })
            .collect();
        let lame = EllipticOperator::lame(2, 1.3, 0.7).unwrap();
        for v in lame.apply_jet(&[s, xn], &jets) {
            prop_assert_eq!(v, 0.0);
        }
        let lap = EllipticOperator::laplace(2).unwrap();
        prop_assert_eq!(lap.apply_jet(&[s, xn], &jets[..1])[0], 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn discrete_maximum_principle_for_laplace(
        eps in 0.02f64..0.2, gp in prop::collection::vec(-2.0f64..2.0, 3), gm in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let r = region(eps, 0.5, 0.5);
        let data = BoundaryData::new(vec![poly1(&gp)], vec![poly1(&gm)]).unwrap();
        let case = solve_case(&EllipticOperator::laplace(2).unwrap(), &r, &data, 33, 17);
        let grid = &case.grid;
        let bv = boundary_values(&data, LateralClosure::Utilde);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for col in 0..grid.ncols() {
            for it in 0..grid.nt {
                if dirichlet(grid, col, it) {
                    let v = bv(&grid.x_prime(col), grid.t(it), 0);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        for v in &case.u.values {
            prop_assert!(*v >= lo - 1e-8 && *v <= hi + 1e-8, "{v} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn boundary_rows_reproduce_data(
        eps in 0.02f64..0.2, gp in prop::collection::vec(-2.0f64..2.0, 3), gm in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let r = region(eps, 0.5, 0.5);
        let plus = vec![poly1(&gp), poly1(&gm)];
        let minus = vec![poly1(&gm), poly1(&gp)];
        let data = BoundaryData::new(plus, minus).unwrap();
        let case = solve_case(&EllipticOperator::lame(2, 1.0, 1.0).unwrap(), &r, &data, 17, 9);
        let grid = &case.grid;
        let bv = boundary_values(&data, LateralClosure::Utilde);
        for col in 0..grid.ncols() {
            for it in 0..grid.nt {
                if !dirichlet(grid, col, it) {
                    continue;
                }
                for l in 0..2 {
                    let want = bv(&grid.x_prime(col), grid.t(it), l);
                    let got = case.u.values[dof(2, grid.node(col, it), l)];
                    prop_assert!((got - want).abs() <= 1e-13 * (1.0 + want.abs()), "{got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn gradients_scale_with_the_data(eps in 0.02f64..0.2, s in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0], tilt in -1.0f64..1.0) {
        let r = region(eps, 0.5, 0.5);
        let op = EllipticOperator::laplace(2).unwrap();
        let data = BoundaryData::new(vec![poly1(&[1.0, tilt])], vec![poly1(&[0.0, 0.5])]).unwrap();
        let scaled = data.scaled(s).unwrap();
        let base = bound_report(&solve_case(&op, &r, &data, 33, 17), &data, DEFAULT_R0, "p").unwrap();
        let other = bound_report(&solve_case(&op, &r, &scaled, 33, 17), &scaled, DEFAULT_R0, "p").unwrap();
        prop_assert!(rel(other.sup_grad, s.abs() * base.sup_grad) < 1e-9);
        prop_assert!(rel(other.c_low.unwrap(), base.c_low.unwrap()) < 1e-9);
    }

    #[test]
    fn constant_matched_data_gives_a_constant_solution(eps in 0.02f64..0.2, value in -5.0f64..5.0) {
        let r = region(eps, 0.5, 0.5);
        let data = BoundaryData::constant(1, &[value, -value], &[value, -value]).unwrap();
        let case = solve_case(&EllipticOperator::lame(2, 1.0, 1.0).unwrap(), &r, &data, 17, 9);
        for node in 0..case.grid.nodes() {
            prop_assert!((case.u.value(node, 0) - value).abs() < 1e-12 * (1.0 + value.abs()));
            prop_assert!((case.u.value(node, 1) + value).abs() < 1e-12 * (1.0 + value.abs()));
        }
        prop_assert!(case.grad_u.max_norm() < 1e-9 * (1.0 + value.abs()) / eps);
    }

    #[test]
    fn local_energy_is_monotone_in_the_radius(x0 in -0.3f64..0.3, mut radii in prop::collection::vec(0.001f64..0.2, 2..6)) {
        radii.sort_by(f64::total_cmp);
        let r = region(0.05, 0.5, 0.5);
        let data = BoundaryData::new(vec![poly1(&[1.0, 0.3, -0.2])], vec![poly1(&[0.0, 0.4])]).unwrap();
        let case = solve_case(&EllipticOperator::laplace(2).unwrap(), &r, &data, 33, 17);
        let prof = local_energy_profile(&case.grid, &case.grad_w, &[x0], &radii).unwrap();
        for w in prof.windows(2) {
            prop_assert!(w[1].1 >= w[0].1);
        }
    }
}
