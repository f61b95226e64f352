//! Acceptance suite: one pass/fail line per criterion, tolerances pinned.
//!
//! Run with `cargo test --test acceptance`. The process exits non-zero if any
//! criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use obmhd::fields::{self, Grid, ScalarField, VectorField};
use obmhd::mms::{self, MhdMmsSettings, MmsStudy, ObmMmsSettings};
use obmhd::obm::{LimitModel, ObmConfig, ObmSolver};
use obmhd::relent::{self, CoercivityConstants, StatePoint, StudyConfig, StudyReport, TestBounds, TestPoint};
use obmhd::thermo::{self, Gas, GasParams, ReferenceCoefficients, ReferenceState, ThermoPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::mean_temperature_oracle;

const GIBBS_CLOSED_TOL: f64 = 1e-12;
const GIBBS_FD_TOL: f64 = 1e-7;
const IDENTITY_TOL: f64 = 1e-12;
const MAGNETIC_TOL: f64 = 1e-10;
const MEAN_REL_TOL: f64 = 1e-3;
const ORDER_RANGE: (f64, f64) = (1.8, 2.2);
/// Relative change of the MMS error when `n1` is doubled.
const HORIZONTAL_FLOOR_TOL: f64 = 1e-2;
const MASS_TOL: f64 = 1e-12;
const MEAN_B1_TOL: f64 = 1e-12;
const DIV_U_TOL: f64 = 1e-12;
const DIV_B_TOL: f64 = 1e-8;
const PRODUCTION_TOL: f64 = -1e-14;

struct Outcome {
    pass: bool,
    detail: String,
    budget: Duration,
}

/// Monitors collected from the runs of criteria 5–7 for criterion 8.
#[derive(Default)]
struct Monitors {
    mass: f64,
    mean_b1: f64,
    div_u: f64,
    div_b: f64,
    production: f64,
    sources: Vec<&'static str>,
}

impl Monitors {
    fn new() -> Self {
        Monitors { production: f64::INFINITY, ..Default::default() }
    }
}

fn unit_gas(a: f64) -> Gas {
    Gas::new(GasParams { a, ..GasParams::default() }).unwrap()
}

fn criterion_1() -> Outcome {
    let gas = unit_gas(0.0);
    let rad = unit_gas(0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut closed, mut fd) = (0.0f64, 0.0f64);
    let h = 1e-5;
    for _ in 0..100 {
        let (r, t) = (rng.gen_range(0.5..=2.0), rng.gen_range(0.5..=2.0));
        for g in [&gas, &rad] {
            let (a, b) = g.gibbs_residual(ThermoPoint::new(r, t)).unwrap();
            closed = closed.max(a).max(b);
            let s = |r: f64, t: f64| g.entropy(ThermoPoint::new(r, t)).unwrap();
            let e = |r: f64, t: f64| g.internal_energy(ThermoPoint::new(r, t)).unwrap();
            let p = g.pressure(ThermoPoint::new(r, t)).unwrap();
            let st = (s(r, t + h) - s(r, t - h)) / (2.0 * h);
            let et = (e(r, t + h) - e(r, t - h)) / (2.0 * h);
            let sr = (s(r + h, t) - s(r - h, t)) / (2.0 * h);
            let er = (e(r + h, t) - e(r - h, t)) / (2.0 * h);
            fd = fd.max((t * st - et).abs()).max((t * sr - (er - p / (r * r))).abs());
        }
    }
    Outcome {
        pass: closed < GIBBS_CLOSED_TOL && fd < GIBBS_FD_TOL,
        detail: format!("Gibbs closed-form {closed:.2e} (< {GIBBS_CLOSED_TOL:.0e}), finite-difference {fd:.2e} (< {GIBBS_FD_TOL:.0e})"),
        budget: Duration::from_secs(1),
    }
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
    for (a, rho, theta) in [(0.0, 1.0, 1.0), (0.3, 0.8, 1.4), (1.0, 1.7, 0.6), (0.0, 2.5, 3.0)] {
        let gas = unit_gas(a);
        let rf = ReferenceState { rho_bar: rho, theta_bar: theta, b_bar: 1.0 };
        let c = ReferenceCoefficients::new(&gas, &rf).unwrap();
        let (t1, t2) = c.cancellation_terms();
        worst = worst.max((t1 + t2).abs());
        worst = worst.max(rel(c.conduction_coefficient(), -c.kappa / c.theta_bar));
        worst = worst.max(rel(c.mean_heat_capacity(), c.rho_bar * c.de_dtheta));
        for &(r, t) in &[(rho, theta), (0.3, 2.0), (4.0, 0.5)] {
            let pt = ThermoPoint::new(r, t);
            let pm = gas.pressure_molecular(pt).unwrap();
            let em = gas.energy_density_molecular(pt).unwrap();
            worst = worst.max(rel(pm, 2.0 / 3.0 * em));
        }
    }
    let (alpha, cp) = unit_gas(0.0).alpha_cp(&ReferenceState { rho_bar: 1.0, theta_bar: 1.0, b_bar: 0.0 }).unwrap();
    let unit = (alpha - 3.0 / 8.0).abs().max((cp - 15.0 / 8.0).abs());
    let suite = thermo::consistency_suite(&unit_gas(0.0), &ReferenceState::default(), 100, 2).unwrap();
    let suite_ok = suite.iter().all(|c| c.passed());
    Outcome {
        pass: worst < IDENTITY_TOL && unit < IDENTITY_TOL && suite_ok,
        detail: format!(
            "identities {worst:.2e}, |α − 3/8|, |c_p − 15/8| {unit:.2e} (< {IDENTITY_TOL:.0e}); stability {}",
            if suite_ok { "ok" } else { "FAILED" }
        ),
        budget: Duration::from_secs(1),
    }
}

fn criterion_3() -> Outcome {
    let grid = Grid::torus2(64, 64).unwrap();
    let b_bar = 1.3;
    let b1 = ScalarField::from_fn(grid, |x, y, _| {
        0.7 * (PI * x).cos() + 0.4 * (2.0 * PI * y + 0.3).sin() + 0.25 * (PI * (3.0 * x - y)).cos()
    });
    let b = VectorField::from_scalars(ScalarField::zeros(grid), ScalarField::zeros(grid), b1.clone()).unwrap();
    let j = fields::curl(&b).unwrap();
    // curl B¹ × (0, 0, b̄) = b̄(J2, −J1, 0)
    let grad_a = fields::grad(&b1.map(|v| b_bar * v)).unwrap();
    let mut lin = 0.0f64;
    for i in 0..grid.len() {
        let f = [b_bar * j.comp(1)[i], -b_bar * j.comp(0)[i], 0.0];
        for c in 0..3 {
            lin = lin.max((f[c] + grad_a.comp(c)[i]).abs());
        }
    }
    let quad = fields::leray_project(&fields::lorentz_force(&b).unwrap()).unwrap().max_abs();
    Outcome {
        pass: lin < MAGNETIC_TOL && quad < MAGNETIC_TOL,
        detail: format!("|curlB¹×B̄ + ∇(b̄b¹)| {lin:.2e}, |P(curlB¹×B¹)| {quad:.2e} (< {MAGNETIC_TOL:.0e})"),
        budget: Duration::from_secs(1),
    }
}

fn random_vec(rng: &mut ChaCha8Rng, max: f64) -> [f64; 3] {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        if v.iter().map(|x: &f64| x * x).sum::<f64>() <= 1.0 {
            return v.map(|x| x * max);
        }
    }
}

fn criterion_4() -> Outcome {
    let gas = unit_gas(0.0);
    let rf = ReferenceState::default();
    let bounds = TestBounds::default();
    let consts = CoercivityConstants::cached(&gas, &rf, bounds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut n_ess, mut n_res, mut failures) = (0usize, 0usize, 0usize);
    let (mut min_ratio, mut min_energy) = (f64::INFINITY, f64::INFINITY);
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.gen_range(lo.ln()..hi.ln())).exp();
    while n_ess < 10_000 || n_res < 1_000 {
        let tp = TestPoint {
            r: rng.gen_range(bounds.box_lo..=bounds.box_hi),
            big_theta: rng.gen_range(bounds.box_lo..=bounds.box_hi),
            u: random_vec(&mut rng, bounds.u_max),
            h: random_vec(&mut rng, bounds.h_max),
        };
        let eps = log_uniform(&mut rng, 1e-3, 1.0);
        let essential = n_ess < 10_000;
        // half of the essential states are O(ε) perturbations of the test point
        let near = essential && rng.gen_bool(0.5);
        let (rho, theta) = if near {
            let d = random_vec(&mut rng, 1.0);
            ((tp.r + eps * d[0]).clamp(0.5, 2.0), (tp.big_theta + eps * d[1]).clamp(0.5, 2.0))
        } else if essential {
            (rng.gen_range(0.5..=2.0), rng.gen_range(0.5..=2.0))
        } else {
            let rho = if rng.gen_bool(0.05) { 0.0 } else { log_uniform(&mut rng, 1e-3, 1e3) };
            (rho, log_uniform(&mut rng, 1e-3, 1e3))
        };
        if relent::in_essential(rho, theta, &rf) != essential {
            continue;
        }
        let (du, db) = (random_vec(&mut rng, 3.0), random_vec(&mut rng, 3.0));
        let sp = if near {
            StatePoint {
                rho,
                theta,
                u: [0, 1, 2].map(|c| tp.u[c] + du[c]),
                b: [0, 1, 2].map(|c| tp.h[c] + eps * db[c]),
            }
        } else {
            StatePoint { rho, theta, u: du, b: db }
        };
        let check = relent::coercivity_point(&gas, &rf, &consts, &sp, &tp, eps).unwrap();
        if essential {
            n_ess += 1;
        } else {
            n_res += 1;
        }
        min_energy = min_energy.min(check.energy);
        if check.bound > 0.0 {
            min_ratio = min_ratio.min(check.energy / check.bound);
        }
        if !(check.energy > check.bound) || check.energy < 0.0 {
            failures += 1;
        }
    }
    Outcome {
        pass: failures == 0 && min_energy >= 0.0 && min_ratio > 1.0,
        detail: format!(
            "{n_ess} essential + {n_res} residual states, {failures} violations, min E/bound {min_ratio:.3}, \
             min E {min_energy:.2e} (c_ess {:.3e}, c_res {:.3e})",
            consts.c_ess, consts.c_res
        ),
        budget: Duration::from_secs(10),
    }
}

fn criterion_5(mon: &mut Monitors) -> Outcome {
    let gas = unit_gas(0.0);
    let rf = ReferenceState::default();
    let grid = Grid::strip2(8, 129).unwrap();
    let t_end = 0.1;
    let cfg = ObmConfig::new(gas.clone(), rf, grid, t_end / 400.0, t_end);
    let solver = ObmSolver::new(cfg).unwrap();
    let h = grid.horizontal();
    let theta0 = ScalarField::from_fn(grid, |_, _, z| (PI * z).sin());
    let init = solver.initial_state(VectorField::zeros(h), theta0, ScalarField::zeros(h)).unwrap();
    let b0 = fields::mean(&init.b1);
    let (mut b_drift, mut div_u) = (0.0f64, 0.0f64);
    let end = solver
        .run(init, |s, d| {
            b_drift = b_drift.max((fields::mean(&s.b1) - b0).abs());
            div_u = div_u.max(d.max_div_u);
        })
        .unwrap();
    let got = fields::mean(&end.theta1);
    let c = *solver.coefficients();
    let want = mean_temperature_oracle(&c, end.t, 1025);
    let rel = (got - want).abs() / want.abs();
    mon.mean_b1 = mon.mean_b1.max(b_drift);
    mon.div_u = mon.div_u.max(div_u);
    mon.sources.push("mean-temperature run");
    Outcome {
        pass: rel < MEAN_REL_TOL,
        detail: format!("mean ϑ¹(0.1) solver {got:.8}, oracle {want:.8}, rel. error {rel:.2e} (< {MEAN_REL_TOL:.0e})"),
        budget: Duration::from_secs(10),
    }
}

fn mms_line(st: &MmsStudy) -> (bool, String) {
    let (lo, hi) = ORDER_RANGE;
    let orders_ok = st.orders.iter().all(|p| (lo..=hi).contains(p));
    let floor_ok = st.horizontal_change() < HORIZONTAL_FLOOR_TOL;
    let orders: Vec<String> = st.orders.iter().map(|p| format!("{p:.3}")).collect();
    (
        orders_ok && floor_ok,
        format!("{} orders [{}], n1-doubling change {:.1e}", st.solver, orders.join(", "), st.horizontal_change()),
    )
}

fn criterion_6(mon: &mut Monitors) -> Outcome {
    let gas = unit_gas(0.0);
    let rf = ReferenceState::default();
    let (obm, mhd) = std::thread::scope(|s| {
        let o = s.spawn(|| mms::obm_study(&gas, &rf, &ObmMmsSettings::default()));
        let m = mms::mhd_study(&gas, &rf, &MhdMmsSettings::default());
        (o.join().unwrap(), m)
    });
    let (obm, mhd) = match (obm, mhd) {
        (Ok(o), Ok(m)) => (o, m),
        (o, m) => {
            return Outcome {
                pass: false,
                detail: format!("run failed: {:?} {:?}", o.err(), m.err()),
                budget: Duration::from_secs(120),
            }
        }
    };
    for l in obm.levels.iter().chain(mhd.levels.iter()).chain([&obm.horizontal, &mhd.horizontal]) {
        mon.div_b = mon.div_b.max(l.max_div_b.unwrap_or(0.0));
        mon.production = mon.production.min(l.min_production_term.unwrap_or(f64::INFINITY));
        mon.mean_b1 = mon.mean_b1.max(l.mean_b1_drift.unwrap_or(0.0));
    }
    mon.sources.push("manufactured runs");
    let (a, la) = mms_line(&obm);
    let (b, lb) = mms_line(&mhd);
    Outcome {
        pass: a && b,
        detail: format!("{la}; {lb} (orders in [{}, {}], change < {HORIZONTAL_FLOOR_TOL:.0e})", ORDER_RANGE.0, ORDER_RANGE.1),
        budget: Duration::from_secs(120),
    }
}

fn study(model: LimitModel) -> StudyReport {
    let grid = Grid::strip2(64, 65).unwrap();
    let mut cfg = StudyConfig::new(unit_gas(0.0), ReferenceState::default(), grid, vec![0.2, 0.1, 0.05]);
    cfg.t_end = 0.25;
    cfg.model = model;
    relent::convergence_study(&cfg).unwrap()
}

fn criterion_7(mon: &mut Monitors) -> Outcome {
    let rep = study(LimitModel::Consistent);
    for r in &rep.runs {
        mon.mass = mon.mass.max(r.mass_drift);
        mon.div_b = mon.div_b.max(r.max_div_b);
        mon.production = mon.production.min(r.min_production_term);
        mon.mean_b1 = mon.mean_b1.max(r.mean_b1_drift);
        mon.div_u = mon.div_u.max(r.max_div_u);
    }
    mon.sources.push("ε-sweep");
    let sup: Vec<String> = rep.runs.iter().map(|r| format!("{:.3e}", r.report.sup_e)).collect();
    let pass = !rep.failed() && rep.energy_decreasing() && rep.deviations_decreasing() && rep.monitors_bounded();
    print!("{}", indent(&rep.summary()));
    Outcome {
        pass,
        detail: format!(
            "sup E [{}] strictly decreasing: {}, deviations decreasing: {}, observed rate {}",
            sup.join(", "),
            rep.energy_decreasing(),
            rep.deviations_decreasing(),
            rep.rate.map_or("n/a".into(), |r| format!("{r:.2}"))
        ),
        budget: Duration::from_secs(600),
    }
}

fn criterion_8(mon: &Monitors) -> Outcome {
    let pass = mon.mass < MASS_TOL
        && mon.mean_b1 < MEAN_B1_TOL
        && mon.div_u < DIV_U_TOL
        && mon.div_b < DIV_B_TOL
        && mon.production >= PRODUCTION_TOL;
    Outcome {
        pass,
        detail: format!(
            "mass drift {:.1e}, mean b¹ drift {:.1e}, div U {:.1e}, div B {:.1e}, min production term {:.2e} over {}",
            mon.mass,
            mon.mean_b1,
            mon.div_u,
            mon.div_b,
            mon.production,
            mon.sources.join(", ")
        ),
        budget: Duration::from_secs(1),
    }
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("      {l}\n")).collect()
}

fn report(n: usize, name: &str, start: Instant, out: Outcome, all: &mut bool) {
    let took = start.elapsed();
    let in_time = took <= out.budget;
    let pass = out.pass && in_time;
    *all &= pass;
    println!(
        "criterion {n} [{}] {name}: {} — {:.2} s (budget {} s{})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64(),
        out.budget.as_secs(),
        if in_time { "" } else { ", exceeded" }
    );
}

fn main() {
    let mut all = true;
    let mut mon = Monitors::new();
    let t = Instant::now();
    report(1, "thermodynamic consistency", t, criterion_1(), &mut all);
    let t = Instant::now();
    report(2, "structural identities", t, criterion_2(), &mut all);
    let t = Instant::now();
    report(3, "magnetic structure of the limit", t, criterion_3(), &mut all);
    let t = Instant::now();
    report(4, "relative-energy coercivity", t, criterion_4(), &mut all);
    let t = Instant::now();
    report(5, "non-local mean-temperature term", t, criterion_5(&mut mon), &mut all);
    let t = Instant::now();
    report(6, "manufactured-solution convergence", t, criterion_6(&mut mon), &mut all);
    let t = Instant::now();
    report(7, "low-Mach convergence study", t, criterion_7(&mut mon), &mut all);
    let t = Instant::now();
    report(8, "conservation and positivity", t, criterion_8(&mon), &mut all);

    // Informational: the same sweep against the limit equations exactly as
    // stated (no compression of the background field). Not a criterion.
    let t = Instant::now();
    let lit = study(LimitModel::Literal);
    let sup: Vec<String> = lit.runs.iter().map(|r| format!("{:.3e}", r.report.sup_e)).collect();
    let dev: Vec<String> = lit.runs.iter().map(|r| format!("{:.3e}", r.sup_dev.b)).collect();
    println!(
        "info: sweep against the uncorrected limit model: sup E [{}], sup dev B [{}], rate {} — {:.1} s",
        sup.join(", "),
        dev.join(", "),
        lit.rate.map_or("n/a".into(), |r| format!("{r:.2}")),
        t.elapsed().as_secs_f64()
    );

    println!("acceptance: {}", if all { "all criteria passed" } else { "FAILED" });
    if !all {
        std::process::exit(1);
    }
}
