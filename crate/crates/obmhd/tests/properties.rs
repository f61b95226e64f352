//! Property tests for the invariants of every module.

use std::f64::consts::PI;

use obmhd::fields::{self, spectral, Grid, ScalarField, VectorField};
use obmhd::mhd::{MhdConfig, MhdSolver, PrimitiveState};
use obmhd::obm::{ObmConfig, ObmSolver, WallProfile};
use obmhd::relent::{self, StatePoint, TestPoint, TestQuadruple};
use obmhd::thermo::{DefaultStructural, Gas, GasParams, ReferenceCoefficients, ReferenceState, Structural, ThermoPoint};
use proptest::prelude::*;

mod common;
use common::mean_temperature_oracle;

fn gas(p_inf: f64, a: f64) -> Gas {
    Gas::new(GasParams { p_inf, a, ..GasParams::default() }).unwrap()
}

fn log_range(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

// ---------------------------------------------------------------- thermo

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gibbs_closed_form(r in 0.5..2.0f64, t in 0.5..2.0f64, p_inf in 0.2..3.0f64, a in 0.0..2.0f64) {
        let g = gas(p_inf, a);
        let (r1, r2) = g.gibbs_residual(ThermoPoint::new(r, t)).unwrap();
        prop_assert!(r1 < 1e-12 && r2 < 1e-12, "{r1:e} {r2:e}");
    }

    #[test]
    fn gibbs_against_finite_differences(r in 0.5..2.0f64, t in 0.5..2.0f64, a in 0.0..1.0f64) {
        let g = gas(1.0, a);
        let h = 1e-5;
        let s = |r: f64, t: f64| g.entropy(ThermoPoint::new(r, t)).unwrap();
        let e = |r: f64, t: f64| g.internal_energy(ThermoPoint::new(r, t)).unwrap();
        let p = g.pressure(ThermoPoint::new(r, t)).unwrap();
        let st = (s(r, t + h) - s(r, t - h)) / (2.0 * h);
        let et = (e(r, t + h) - e(r, t - h)) / (2.0 * h);
        let sr = (s(r + h, t) - s(r - h, t)) / (2.0 * h);
        let er = (e(r + h, t) - e(r - h, t)) / (2.0 * h);
        prop_assert!((t * st - et).abs() < 1e-7);
        prop_assert!((t * sr - (er - p / (r * r))).abs() < 1e-7);
    }

    #[test]
    fn thermodynamic_stability(r in log_range(0.01, 100.0), t in log_range(0.01, 100.0), a in 0.0..1.0f64) {
        let g = gas(1.0, a);
        let pt = ThermoPoint::new(r, t);
        prop_assert!(g.dp_drho(pt).unwrap() > 0.0);
        prop_assert!(g.de_dtheta(pt).unwrap() > 0.0);
    }

    #[test]
    fn molecular_pressure_is_two_thirds_energy(r in log_range(0.01, 100.0), t in log_range(0.01, 100.0)) {
        let g = gas(1.3, 0.4);
        let pt = ThermoPoint::new(r, t);
        prop_assert_eq!(g.pressure_molecular(pt).unwrap(), 2.0 / 3.0 * g.energy_density_molecular(pt).unwrap());
    }

    #[test]
    fn limit_coefficient_identities(rho in 0.3..3.0f64, theta in 0.3..3.0f64, a in 0.0..1.0f64, p_inf in 0.2..3.0f64) {
        let g = gas(p_inf, a);
        let c = ReferenceCoefficients::new(&g, &ReferenceState { rho_bar: rho, theta_bar: theta, b_bar: 1.0 }).unwrap();
        let (t1, t2) = c.cancellation_terms();
        prop_assert!((t1 + t2).abs() < 1e-12 * (1.0 + t1.abs()));
        prop_assert!((c.conduction_coefficient() + c.kappa / c.theta_bar).abs() < 1e-12);
        prop_assert!((c.mean_heat_capacity() - c.rho_bar * c.de_dtheta).abs() < 1e-12 * (1.0 + c.rho_bar * c.de_dtheta));
    }

    #[test]
    fn molecular_entropy_decreases(z in log_range(1e-6, 1e6), p_inf in 0.2..3.0f64) {
        let law = DefaultStructural { p_inf, s0: 0.0 };
        prop_assert!(law.ds(z) < 0.0);
    }
}

// ---------------------------------------------------------------- fields

fn strip_field(grid: Grid, c: [f64; 4]) -> ScalarField {
    ScalarField::from_fn(grid, move |x, _, z| {
        c[0] * (PI * x).cos() * (PI * z).sin() + c[1] * (2.0 * PI * x).sin() + c[2] * (PI * z).cos() + c[3] * z * z
    })
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn operators_are_linear(c in prop::array::uniform4(-1.0..1.0f64), d in prop::array::uniform4(-1.0..1.0f64),
                            a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let grid = Grid::strip2(16, 17).unwrap();
        let (f, g) = (strip_field(grid, c), strip_field(grid, d));
        let comb = f.lincomb(a, &g, b).unwrap();
        let lf = fields::laplacian(&f).unwrap();
        let lg = fields::laplacian(&g).unwrap();
        let lc = fields::laplacian(&comb).unwrap();
        prop_assert!(max_dev(lc.data(), lf.lincomb(a, &lg, b).unwrap().data()) < 1e-12 * 1e3);
        let (gf, gg, gc) = (fields::grad(&f).unwrap(), fields::grad(&g).unwrap(), fields::grad(&comb).unwrap());
        prop_assert!(max_dev(gc.comp(0), gf.lincomb(a, &gg, b).unwrap().comp(0)) < 1e-12 * 1e2);
        prop_assert!(max_dev(gc.comp(2), gf.lincomb(a, &gg, b).unwrap().comp(2)) < 1e-12 * 1e2);
    }

    #[test]
    fn horizontal_derivatives_exact_on_resolved_modes(m in 1usize..10, phase in 0.0..6.0f64) {
        let grid = Grid::torus2(32, 32).unwrap();
        let k = PI * m as f64;
        let f = ScalarField::from_fn(grid, move |x, y, _| (k * x + phase).sin() + (k * y).cos());
        let g = fields::grad(&f).unwrap();
        let want1: Vec<f64> = (0..grid.len()).map(|i| { let (x, _, _) = grid.coords(i); k * (k * x + phase).cos() }).collect();
        let want2: Vec<f64> = (0..grid.len()).map(|i| { let (_, y, _) = grid.coords(i); -k * (k * y).sin() }).collect();
        prop_assert!(max_dev(g.comp(0), &want1) < 1e-10 * k);
        prop_assert!(max_dev(g.comp(1), &want2) < 1e-10 * k);
    }

    #[test]
    fn leray_output_is_spectrally_solenoidal(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let grid = Grid::torus2(32, 32).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let comps: [Vec<f64>; 3] = std::array::from_fn(|_| (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let p = fields::leray_project(&VectorField::new(grid, comps).unwrap()).unwrap();
        let d = fields::div(&p).unwrap();
        prop_assert!(d.max_abs() < 1e-12 * (grid.n1 as f64));
        // spectral divergence: k·v̂
        let (s1, s2) = (spectral::forward(&grid, p.comp(0)), spectral::forward(&grid, p.comp(1)));
        let mut worst = 0.0f64;
        for m2 in 0..grid.n2 {
            for m1 in 0..grid.n1 {
                let i = m1 + grid.n1 * m2;
                let v = s1[i] * spectral::first_derivative_wavenumber(grid.n1, m1)
                    + s2[i] * spectral::first_derivative_wavenumber(grid.n2, m2);
                worst = worst.max(v.norm() / grid.len() as f64);
            }
        }
        prop_assert!(worst < 1e-12, "{worst:e}");
    }
}

#[test]
fn vertical_laplacian_is_second_order() {
    let err = |n3: usize| {
        let grid = Grid::strip2(4, n3).unwrap();
        let f = ScalarField::from_fn(grid, |_, _, z| (PI * z).cos());
        let l = fields::laplacian(&f).unwrap();
        (0..grid.len()).map(|i| (l.data()[i] + PI * PI * (PI * grid.coords(i).2).cos()).abs()).fold(0.0, f64::max)
    };
    let (e1, e2, e3) = (err(33), err(65), err(129));
    for ratio in [e1 / e2, e2 / e3] {
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }
}

// ---------------------------------------------------------------- obm

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn limit_solver_structure(c in prop::array::uniform4(-1.0..1.0f64), u in -0.5..0.5f64) {
        let gas = gas(1.0, 0.0);
        let grid = Grid::strip3(8, 8, 9).unwrap();
        let solver = ObmSolver::new(ObmConfig::new(gas, ReferenceState::default(), grid, 2e-3, 0.05)).unwrap();
        let h = grid.horizontal();
        let theta = ScalarField::from_fn(grid, move |x, y, z| (PI * z).sin() * (c[0] + c[1] * (PI * x).cos() + c[2] * (PI * y).sin()));
        let b1 = ScalarField::from_fn(h, move |x, y, _| c[3] * (PI * (x + y)).cos() + 0.2);
        let vel = VectorField::from_fn(h, move |x, y, _| [u * (PI * y).sin(), u * (PI * x).cos(), 0.0]);
        let mut st = solver.initial_state(vel, theta, b1).unwrap();
        let b0 = fields::mean(&st.b1);
        let coef = *solver.coefficients();
        for _ in 0..25 {
            st = solver.step(&st).unwrap();
            prop_assert!(solver.max_div_u(&st) < 1e-12);
            prop_assert!((fields::mean(&st.b1) - b0).abs() < 1e-12);
            prop_assert_eq!(st.chi, coef.dp_dtheta * fields::mean(&st.theta1));
            let d = solver.derived(&st).unwrap();
            let a = st.b1.map(|v| coef.b_bar * v);
            prop_assert_eq!(d.a.data(), a.data());
        }
    }
}

#[test]
fn mean_temperature_matches_depth_oracle() {
    let gas = gas(1.0, 0.0);
    let grid = Grid::strip2(4, 129).unwrap();
    let mut cfg = ObmConfig::new(gas, ReferenceState::default(), grid, 1e-4, 0.1);
    cfg.g = ScalarField::zeros(grid);
    let solver = ObmSolver::new(cfg).unwrap();
    let h = grid.horizontal();
    let init = solver
        .initial_state(VectorField::zeros(h), ScalarField::from_fn(grid, |_, _, z| (PI * z).sin()), ScalarField::zeros(h))
        .unwrap();
    let end = solver.run(init, |_, _| {}).unwrap();
    let mean = mean_temperature_oracle(solver.coefficients(), end.t, 2049);
    let got = fields::mean(&end.theta1);
    let rel = (got - mean).abs() / mean.abs();
    assert!(rel < 1e-4, "solver {got}, oracle {mean}, rel {rel:e}");
}

// ---------------------------------------------------------------- mhd

fn perturbed_state(grid: Grid, eps: f64, c: [f64; 4]) -> PrimitiveState {
    let mut st = PrimitiveState::rest(grid, &ReferenceState::default(), eps);
    st.rho = ScalarField::from_fn(grid, move |x, _, z| 1.0 + 0.05 * c[0] * (PI * x).cos() * (PI * z).cos());
    st.u = VectorField::from_fn(grid, move |x, _, z| {
        [0.1 * c[1] * (PI * x).sin() * (PI * z).cos(), 0.0, 0.1 * c[1] * (PI * x).cos() * (PI * z).sin()]
    });
    st.theta = ScalarField::from_fn(grid, move |x, _, z| 1.0 + 0.1 * c[2] * (PI * z).sin() * (1.0 + (PI * x).cos()));
    st.b = VectorField::from_fn(grid, move |x, _, z| {
        [-eps * c[3] * (PI * x).cos() * (PI * z).sin() * 0.1, 0.0, 1.0 + eps * c[3] * 0.1 * (PI * x).sin() * (PI * z).cos() ]
    });
    st
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn primitive_solver_structure(c in prop::array::uniform4(-1.0..1.0f64), eps in 0.1..0.5f64) {
        let grid = Grid::strip2(16, 17).unwrap();
        let solver = MhdSolver::new(MhdConfig::new(gas(1.0, 0.0), ReferenceState::default(), grid, eps, 0.02)).unwrap();
        let st = solver.prepare(perturbed_state(grid, eps, c)).unwrap();
        let d0 = solver.diagnostics(&st).unwrap();
        let mut worst_div = 0.0f64;
        let mut min_prod = f64::INFINITY;
        let mut out_of_plane = 0.0f64;
        let run = solver.run(st, |s, _| {
            worst_div = worst_div.max(solver.max_div_b(s));
            let terms = solver.entropy_production_terms(s).unwrap();
            min_prod = terms.iter().fold(min_prod, |m, f| m.min(f.min()));
            out_of_plane = out_of_plane.max(s.u.component(1).max_abs()).max(s.b.component(1).max_abs());
        });
        prop_assert!(run.failure.is_none());
        let d1 = solver.diagnostics(&run.state).unwrap();
        prop_assert!(((d1.mass - d0.mass) / d0.mass).abs() < 1e-12);
        prop_assert!((d1.mean_b3 - d0.mean_b3).abs() < 1e-12);
        prop_assert!(worst_div < 1e-8);
        prop_assert!(min_prod >= -1e-14);
        // with u2 = B2 = 0 the out-of-plane sector stays empty
        prop_assert!(out_of_plane < 1e-12);
    }
}

// ---------------------------------------------------------------- relent

fn any_point() -> impl Strategy<Value = (StatePoint, TestPoint, f64)> {
    let v = || prop::array::uniform3(-3.0..3.0f64);
    (
        prop_oneof![Just(0.0), log_range(1e-3, 1e3)],
        log_range(1e-3, 1e3),
        v(),
        v(),
        0.5..2.0f64,
        0.5..2.0f64,
        v(),
        v(),
        log_range(1e-3, 1.0),
    )
        .prop_map(|(rho, theta, u, b, r, big_theta, uu, h, eps)| {
            (StatePoint { rho, theta, u, b }, TestPoint { r, big_theta, u: uu, h }, eps)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn relative_energy_is_non_negative((sp, tp, eps) in any_point()) {
        let g = gas(1.0, 0.0);
        prop_assert!(relent::rel_energy_density(&g, &sp, &tp, eps).unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn relative_energy_vanishes_only_at_the_test_point((_, tp, eps) in any_point(), which in 0usize..8, sign in prop::bool::ANY) {
        let g = gas(1.0, 0.3);
        let same = tp.as_state();
        prop_assert_eq!(relent::rel_energy_density(&g, &same, &tp, eps).unwrap(), 0.0);
        let d = if sign { 1e-3 } else { -1e-3 };
        let mut sp = same;
        match which {
            0 => sp.rho += d,
            1 => sp.theta += d,
            2..=4 => sp.u[which - 2] += d,
            _ => sp.b[which - 5] += d,
        }
        prop_assert!(relent::rel_energy_density(&g, &sp, &tp, eps).unwrap() > 0.0);
    }

    #[test]
    fn essential_residual_partition(seed in 0u64..10_000, eps in 0.05..1.0f64) {
        use rand::{Rng, SeedableRng};
        let g = gas(1.0, 0.0);
        let rf = ReferenceState::default();
        let grid = Grid::strip2(8, 9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = grid.len();
        let mut st = PrimitiveState::rest(grid, &rf, eps);
        st.rho = ScalarField::new(grid, (0..n).map(|_| rng.gen_range(0.1..4.0)).collect()).unwrap();
        st.theta = ScalarField::new(grid, (0..n).map(|_| rng.gen_range(0.1..4.0)).collect()).unwrap();
        let test = TestQuadruple::new(
            ScalarField::constant(grid, rf.rho_bar),
            ScalarField::constant(grid, rf.theta_bar),
            VectorField::zeros(grid),
            VectorField::from_fn(grid, |_, _, _| [0.0, 0.0, rf.b_bar]),
            eps,
            &rf,
            &WallProfile::uniform(&grid, 0.0, 0.0),
        ).unwrap();
        let split = relent::ess_res_split(&g, &rf, &st, &test).unwrap();
        prop_assert!((split.ess + split.res - split.total).abs() <= 1e-15 * split.total.abs());
        // independent re-integration of the essential part
        let w = grid.vertical_weights();
        let l = grid.layer_len();
        let ess: f64 = (0..n)
            .filter(|&i| relent::in_essential(st.rho.data()[i], st.theta.data()[i], &rf))
            .map(|i| w[i / l] * split.density.data()[i] / l as f64)
            .sum::<f64>() * grid.volume();
        prop_assert!((ess - split.ess).abs() <= 1e-12 * (1.0 + split.ess.abs()), "{ess} vs {}", split.ess);
    }
}

/// Hessian of `(ρ, S) ↦ ρe` from finite differences of the conjugate
/// variables `(∂ρ, ∂S)(ρe) = (e + p/ρ − θs, θ)` expressed in `(ρ, θ)`.
fn fd_hessian(g: &Gas, rho: f64, theta: f64) -> [[f64; 2]; 2] {
    let h = 1e-3 * rho.min(theta);
    let pt = |r, t| ThermoPoint::new(r, t);
    let gibbs = |r: f64, t: f64| {
        g.internal_energy(pt(r, t)).unwrap() + g.pressure(pt(r, t)).unwrap() / r - t * g.entropy(pt(r, t)).unwrap()
    };
    let big_s = |r: f64, t: f64| g.entropy_density(pt(r, t)).unwrap();
    let d = |f: &dyn Fn(f64, f64) -> f64| {
        (
            (f(rho + h, theta) - f(rho - h, theta)) / (2.0 * h),
            (f(rho, theta + h) - f(rho, theta - h)) / (2.0 * h),
        )
    };
    let (g_r, g_t) = d(&gibbs);
    let (s_r, s_t) = d(&big_s);
    // ∂(ρ,S)/∂(ρ,θ) = [[1, 0], [s_r, s_t]]; invert and apply
    let inv = [[1.0, 0.0], [-s_r / s_t, 1.0 / s_t]];
    let jac = [[g_r, g_t], [0.0, 1.0]];
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = jac[i][0] * inv[0][j] + jac[i][1] * inv[1][j];
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn energy_hessian_matches_finite_differences(rho in 0.5..2.0f64, theta in 0.5..2.0f64, a in 0.0..1.0f64) {
        let g = gas(1.0, a);
        let want = fd_hessian(&g, rho, theta);
        let got = relent::energy_hessian(&g, rho, theta);
        let scale = want.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((got[i][j] - want[i][j]).abs() < 1e-3 * scale, "{got:?} vs {want:?}");
            }
        }
    }
}
