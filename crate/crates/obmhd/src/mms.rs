//! Manufactured solutions for both solvers.
//!
//! Exact fields are sums of separable trigonometric products times
//! `φ(t) = 1 + t`. They are carried as [`Jet`]s (value, time derivative and
//! spatial derivatives up to second order in `(x1, x3)`), the continuum right
//! side is evaluated pointwise from the jets, and the source
//! `S = ∂t q − R(q)` is handed to the solver through its source hook.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use crate::fields::{self, Grid, ScalarField, VectorField};
use crate::mhd::{MhdConfig, MhdSolver, MhdSources, PrimitiveState};
use crate::obm::{ObmConfig, ObmSolver, ObmSources};
use crate::thermo::{Gas, ReferenceCoefficients, ReferenceState};
use crate::{Error, Result};

/// A scalar with its derivatives `∂t, ∂1, ∂3, ∂11, ∂13, ∂33`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub t: f64,
    pub x: f64,
    pub z: f64,
    pub xx: f64,
    pub xz: f64,
    pub zz: f64,
}

impl Jet {
    pub fn constant(v: f64) -> Jet {
        Jet { v, ..Jet::default() }
    }

    /// `cos(πk x1)` or `sin(πk x1)`.
    pub fn wave_x(sine: bool, k: f64, x: f64) -> Jet {
        let (v, d, dd) = wave(sine, k, x);
        Jet { v, x: d, xx: dd, ..Jet::default() }
    }

    pub fn wave_z(sine: bool, k: f64, z: f64) -> Jet {
        let (v, d, dd) = wave(sine, k, z);
        Jet { v, z: d, zz: dd, ..Jet::default() }
    }

    /// `φ(t) = 1 + t`.
    pub fn ramp(t: f64) -> Jet {
        Jet { v: 1.0 + t, t: 1.0, ..Jet::default() }
    }

    /// `f(self)` given `f`, `f'`, `f''` at `self.v`.
    pub fn compose(self, f: f64, f1: f64, f2: f64) -> Jet {
        Jet {
            v: f,
            t: f1 * self.t,
            x: f1 * self.x,
            z: f1 * self.z,
            xx: f2 * self.x * self.x + f1 * self.xx,
            xz: f2 * self.x * self.z + f1 * self.xz,
            zz: f2 * self.z * self.z + f1 * self.zz,
        }
    }

    pub fn lap(&self) -> f64 {
        self.xx + self.zz
    }
}

fn wave(sine: bool, k: f64, s: f64) -> (f64, f64, f64) {
    let w = PI * k;
    let (sn, cs) = (w * s).sin_cos();
    if sine {
        (sn, w * cs, -w * w * sn)
    } else {
        (cs, -w * sn, -w * w * cs)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            t: self.t + o.t,
            x: self.x + o.x,
            z: self.z + o.z,
            xx: self.xx + o.xx,
            xz: self.xz + o.xz,
            zz: self.zz + o.zz,
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self * -1.0
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        Jet {
            v: c * self.v,
            t: c * self.t,
            x: c * self.x,
            z: c * self.z,
            xx: c * self.xx,
            xz: c * self.xz,
            zz: c * self.zz,
        }
    }
}

impl Mul for Jet {
    type Output = Jet;
    /// Product rule; the time derivative is first order only.
    fn mul(self, o: Jet) -> Jet {
        let (a, b) = (self, o);
        Jet {
            v: a.v * b.v,
            t: a.t * b.v + a.v * b.t,
            x: a.x * b.v + a.v * b.x,
            z: a.z * b.v + a.v * b.z,
            xx: a.xx * b.v + 2.0 * a.x * b.x + a.v * b.xx,
            xz: a.xz * b.v + a.x * b.z + a.z * b.x + a.v * b.xz,
            zz: a.zz * b.v + 2.0 * a.z * b.z + a.v * b.zz,
        }
    }
}

/// Amplitudes of the primitive manufactured solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhdManufactured {
    pub amp: f64,
    pub amp_b: f64,
}

impl Default for MhdManufactured {
    fn default() -> Self {
        MhdManufactured { amp: 0.1, amp_b: 0.1 }
    }
}

/// Exact primitive fields `(ρ, u1, u2, u3, θ, B1, B2, B3)` at a point.
impl MhdManufactured {
    pub fn fields(&self, rf: &ReferenceState, x: f64, z: f64, t: f64) -> [Jet; 8] {
        let (a, ab) = (self.amp, self.amp_b);
        let phi = Jet::ramp(t);
        let (c1, s1) = (Jet::wave_x(false, 1.0, x), Jet::wave_x(true, 1.0, x));
        let (c3, s3) = (Jet::wave_z(false, 1.0, z), Jet::wave_z(true, 1.0, z));
        let one = Jet::constant(1.0);
        let rho = Jet::constant(rf.rho_bar) + c1 * c3 * phi * a;
        let u1 = s1 * c3 * phi * a;
        let u2 = c1 * c3 * phi * a;
        let u3 = c1 * s3 * phi * a;
        let theta = Jet::constant(rf.theta_bar) + (one + c1) * s3 * phi * a;
        // B = (−∂3ψ, B2, b̄ + ∂1ψ) with ψ = A_B cos(πx1) cos(πx3) φ.
        let b1 = c1 * s3 * phi * (ab * PI);
        let b2 = s1 * s3 * phi * ab;
        let b3 = Jet::constant(rf.b_bar) - s1 * c3 * phi * (ab * PI);
        [rho, u1, u2, u3, theta, b1, b2, b3]
    }
}

/// Continuum right side of the primitive system at a point.
pub fn mhd_continuum_rhs(gas: &Gas, eps: f64, q: &[Jet; 8], g: Jet) -> Result<[f64; 8]> {
    let [rho, u1, u2, u3, th, b1, b2, b3] = *q;
    let (r, t) = (rho.v, th.v);
    let (ie, ie2) = (1.0 / eps, 1.0 / (eps * eps));
    let p_r = gas.dp_drho_raw(r, t);
    let p_t = gas.dp_dtheta_raw(r, t);
    let e_t = gas.de_dtheta_raw(r, t);
    let (mu, eta, kap, zet) = (gas.mu_raw(t), gas.eta_raw(t), gas.kappa_raw(t), gas.zeta_raw(t));
    let [dmu, deta, dkap, dzet] = gas.transport_derivatives(t)?;
    let lam = eta - 2.0 * mu / 3.0;
    let dlam = deta - 2.0 * dmu / 3.0;

    let d_rho = -((rho * u1).x + (rho * u3).z);

    let div = u1.x + u3.z;
    let gd1 = u1.xx + u3.xz;
    let gd3 = u1.xz + u3.zz;
    let (mux, muz) = (dmu * th.x, dmu * th.z);
    let (lamx, lamz) = (dlam * th.x, dlam * th.z);
    let v1 = mu * u1.lap() + (mu + lam) * gd1 + div * lamx + mux * 2.0 * u1.x + muz * (u1.z + u3.x);
    let v2 = mu * u2.lap() + mux * u2.x + muz * u2.z;
    let v3 = mu * u3.lap() + (mu + lam) * gd3 + div * lamz + mux * (u3.x + u1.z) + muz * 2.0 * u3.z;
    let (px, pz) = (p_r * rho.x + p_t * th.x, p_r * rho.z + p_t * th.z);
    let j1 = -b2.z;
    let j2 = b1.z - b3.x;
    let j3 = b2.x;
    let l1 = j2 * b3.v - j3 * b2.v;
    let l2 = j3 * b1.v - j1 * b3.v;
    let l3 = j1 * b2.v - j2 * b1.v;
    let d_u1 = -(u1.v * u1.x + u3.v * u1.z) + (v1 - ie2 * px + ie * r * g.x + ie2 * l1) / r;
    let d_u2 = -(u1.v * u2.x + u3.v * u2.z) + (v2 + ie2 * l2) / r;
    let d_u3 = -(u1.v * u3.x + u3.v * u3.z) + (v3 - ie2 * pz + ie * r * g.z + ie2 * l3) / r;

    let e2a = b3 * u1 - b1 * u3;
    let d_b1 = e2a.z + dzet * th.z * j2 + zet * (b1.zz - b3.xz);
    let e3a = b1 * u2 - b2 * u1;
    let e1a = b2 * u3 - b3 * u2;
    let d_b2 = e3a.x + dzet * th.x * b2.x + zet * b2.xx - (e1a.z - dzet * th.z * b2.z - zet * b2.zz);
    let d_b3 = -(e2a.x + dzet * th.x * j2 + zet * (b1.xz - b3.xx));

    let gu = [[u1.x, 0.0, u1.z], [u2.x, 0.0, u2.z], [u3.x, 0.0, u3.z]];
    let sdu = crate::mhd::dissipation(mu, eta, gu);
    let cond = dkap * (th.x * th.x + th.z * th.z) + kap * th.lap();
    let jj = j1 * j1 + j2 * j2 + j3 * j3;
    let num = -t * p_t * div + eps * eps * sdu + cond + zet * jj;
    let d_th = num / (r * e_t) - (u1.v * th.x + u3.v * th.z);
    Ok([d_rho, d_u1, d_u2, d_u3, d_th, d_b1, d_b2, d_b3])
}

/// Error of one refinement level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmsLevel {
    pub n1: usize,
    pub n3: usize,
    pub steps: usize,
    /// Sum over unknowns of the RMS nodal error at the final time.
    pub error: f64,
    /// Structural monitors over the run (`None` where not applicable):
    /// `max |div B|`, the smallest pointwise entropy-production term, and the
    /// drift of `mean(b¹)`.
    pub max_div_b: Option<f64>,
    pub min_production_term: Option<f64>,
    pub mean_b1_drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmsStudy {
    pub solver: &'static str,
    /// Vertical refinement at fixed `n1`.
    pub levels: Vec<MmsLevel>,
    /// `log2(e_k / e_{k+1})` between consecutive levels.
    pub orders: Vec<f64>,
    /// The coarsest vertical level repeated with doubled `n1`.
    pub horizontal: MmsLevel,
}

impl MmsStudy {
    /// Relative change of the error when `n1` is doubled.
    pub fn horizontal_change(&self) -> f64 {
        let base = self.levels[0].error;
        (self.horizontal.error - base).abs() / base
    }

    pub const CSV_HEADER: &'static str = "solver,n1,n3,steps,error,observed_order";

    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for (k, l) in self.levels.iter().enumerate() {
            let order = if k == 0 { String::new() } else { format!("{:.6}", self.orders[k - 1]) };
            rows.push(format!("{},{},{},{},{:.12e},{}", self.solver, l.n1, l.n3, l.steps, l.error, order));
        }
        let h = &self.horizontal;
        rows.push(format!("{},{},{},{},{:.12e},", self.solver, h.n1, h.n3, h.steps, h.error));
        rows
    }
}

fn orders(levels: &[MmsLevel]) -> Vec<f64> {
    levels.windows(2).map(|w| (w[0].error / w[1].error).log2()).collect()
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Settings for the primitive-solver study.
#[derive(Debug, Clone, PartialEq)]
pub struct MhdMmsSettings {
    pub eps: f64,
    pub n1: usize,
    pub n3_levels: Vec<usize>,
    pub t_end: f64,
    pub cfl: f64,
    pub solution: MhdManufactured,
}

impl Default for MhdMmsSettings {
    fn default() -> Self {
        MhdMmsSettings {
            eps: 1.0,
            n1: 16,
            n3_levels: vec![33, 65, 129],
            t_end: 0.05,
            cfl: 0.35,
            solution: MhdManufactured::default(),
        }
    }
}

fn mhd_exact_state(sol: &MhdManufactured, rf: &ReferenceState, grid: Grid, eps: f64, t: f64) -> PrimitiveState {
    let n = grid.len();
    let mut q: [Vec<f64>; 8] = Default::default();
    for v in q.iter_mut() {
        *v = vec![0.0; n];
    }
    for i in 0..n {
        let (x, _, z) = grid.coords(i);
        let f = sol.fields(rf, x, z, t);
        for c in 0..8 {
            q[c][i] = f[c].v;
        }
    }
    let [rho, u1, u2, u3, th, b1, b2, b3] = q;
    PrimitiveState {
        rho: ScalarField::from_vec(grid, rho),
        u: VectorField::from_vecs(grid, [u1, u2, u3]),
        theta: ScalarField::from_vec(grid, th),
        b: VectorField::from_vecs(grid, [b1, b2, b3]),
        eps,
        t,
    }
}

/// Runs the primitive solver against the manufactured solution on one grid.
pub fn mhd_level(gas: &Gas, rf: &ReferenceState, s: &MhdMmsSettings, n1: usize, n3: usize) -> Result<MmsLevel> {
    let grid = Grid::strip2(n1, n3)?;
    let eps = s.eps;
    let sol = s.solution;
    let g_fn = |z: f64| Jet { v: 0.5 - z, z: -1.0, ..Jet::default() };
    let (gas_h, rf_h) = (gas.clone(), *rf);
    let hook = Arc::new(move |t: f64, grid: &Grid| {
        let n = grid.len();
        let mut out: [Vec<f64>; 8] = Default::default();
        for v in out.iter_mut() {
            *v = vec![0.0; n];
        }
        for i in 0..n {
            let (x, _, z) = grid.coords(i);
            let q = sol.fields(&rf_h, x, z, t);
            let r = mhd_continuum_rhs(&gas_h, eps, &q, g_fn(z)).expect("admissible manufactured state");
            for c in 0..8 {
                out[c][i] = q[c].t - r[c];
            }
        }
        let [rho, u1, u2, u3, th, b1, b2, b3] = out;
        MhdSources { rho: Some(rho), u: Some([u1, u2, u3]), theta: Some(th), b: Some([b1, b2, b3]) }
    });
    let mut cfg = MhdConfig::new(gas.clone(), *rf, grid, eps, s.t_end);
    cfg.cfl = s.cfl;
    cfg.source = Some(hook);
    let solver = MhdSolver::new(cfg)?;
    let init = solver.prepare(mhd_exact_state(&sol, rf, grid, eps, 0.0))?;
    let (mut div_b, mut min_prod) = (0.0f64, f64::INFINITY);
    let mut monitor_err = None;
    let run = solver.run(init, |st, k| {
        div_b = div_b.max(solver.max_div_b(st));
        if k % 10 == 0 {
            match solver.entropy_production_terms(st) {
                Ok(terms) => min_prod = terms.iter().fold(min_prod, |m, f| m.min(f.min())),
                Err(e) => {
                    monitor_err.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = run.failure.or(monitor_err) {
        return Err(e);
    }
    let exact = mhd_exact_state(&sol, rf, grid, eps, run.state.t);
    let st = &run.state;
    let mut error = rms(st.rho.data(), exact.rho.data()) + rms(st.theta.data(), exact.theta.data());
    for c in 0..3 {
        error += rms(st.u.comp(c), exact.u.comp(c)) + rms(st.b.comp(c), exact.b.comp(c));
    }
    Ok(MmsLevel {
        n1,
        n3,
        steps: run.steps,
        error,
        max_div_b: Some(div_b),
        min_production_term: Some(min_prod),
        mean_b1_drift: None,
    })
}

pub fn mhd_study(gas: &Gas, rf: &ReferenceState, s: &MhdMmsSettings) -> Result<MmsStudy> {
    if s.n3_levels.len() < 2 {
        return Err(Error::Config("a convergence study needs at least two levels".into()));
    }
    let levels = s
        .n3_levels
        .iter()
        .map(|&n3| mhd_level(gas, rf, s, s.n1, n3))
        .collect::<Result<Vec<_>>>()?;
    let horizontal = mhd_level(gas, rf, s, 2 * s.n1, s.n3_levels[0])?;
    Ok(MmsStudy { solver: "mhd", orders: orders(&levels), levels, horizontal })
}

/// Settings for the limit-solver study (`Strip2`, `U = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct ObmMmsSettings {
    pub n1: usize,
    pub n3_levels: Vec<usize>,
    pub t_end: f64,
    /// `dt = dt_factor · h3`.
    pub dt_factor: f64,
}

impl Default for ObmMmsSettings {
    fn default() -> Self {
        ObmMmsSettings { n1: 16, n3_levels: vec![33, 65, 129], t_end: 0.25, dt_factor: 0.25 }
    }
}

/// `ϑ¹ = [sin(πx3)(1 + ½cos(πx1)) + ¼sin(2πx3)]φ`.
pub fn obm_theta1(x: f64, z: f64, t: f64) -> Jet {
    let phi = Jet::ramp(t);
    let c1 = Jet::wave_x(false, 1.0, x);
    let s3 = Jet::wave_z(true, 1.0, z);
    let s23 = Jet::wave_z(true, 2.0, z);
    (s3 * (Jet::constant(1.0) + c1 * 0.5) + s23 * 0.25) * phi
}

/// `b¹ = ½cos(πx1)φ`.
pub fn obm_b1(x: f64, t: f64) -> Jet {
    Jet::wave_x(false, 1.0, x) * Jet::ramp(t) * 0.5
}

/// `d⟨ϑ¹⟩/dt` of the manufactured temperature (the mean of `sin(πx3)` is `2/π`).
fn obm_mean_rate() -> f64 {
    2.0 / PI
}

pub fn obm_level(gas: &Gas, rf: &ReferenceState, s: &ObmMmsSettings, n1: usize, n3: usize) -> Result<MmsLevel> {
    let grid = Grid::strip2(n1, n3)?;
    let c = ReferenceCoefficients::new(gas, rf)?;
    let dt0 = s.dt_factor * grid.h3();
    let steps = (s.t_end / dt0).ceil() as usize;
    let dt = s.t_end / steps as f64;
    let hook = Arc::new(move |t: f64, grid: &Grid| {
        let h = grid.horizontal();
        let rcp = c.rho_bar * c.cp;
        let ta = c.theta_bar * c.alpha;
        let theta = (0..grid.len())
            .map(|i| {
                let (x, _, z) = grid.coords(i);
                let th = obm_theta1(x, z, t);
                let a = obm_b1(x, t) * c.b_bar;
                th.t - (c.kappa * th.lap() + ta * c.zeta * a.xx + ta * c.dp_dtheta * obm_mean_rate()) / rcp
            })
            .collect();
        let b1 = (0..h.len())
            .map(|i| {
                let b = obm_b1(h.coords(i).0, t);
                b.t - c.zeta * b.xx
            })
            .collect();
        ObmSources { theta1: Some(theta), b1: Some(b1), u: None }
    });
    let mut cfg = ObmConfig::new(gas.clone(), *rf, grid, dt, s.t_end);
    cfg.source = Some(hook);
    let solver = ObmSolver::new(cfg)?;
    let h = grid.horizontal();
    let th0 = ScalarField::from_fn(grid, |x, _, z| obm_theta1(x, z, 0.0).v);
    let b0 = ScalarField::from_fn(h, |x, _, _| obm_b1(x, 0.0).v);
    let init = solver.initial_state(VectorField::zeros(h), th0, b0)?;
    let b_mean0 = fields::mean(&init.b1);
    let mut b_drift = 0.0f64;
    let end = solver.run(init, |st, _| b_drift = b_drift.max((fields::mean(&st.b1) - b_mean0).abs()))?;
    let t = end.t;
    let th_ex = ScalarField::from_fn(grid, |x, _, z| obm_theta1(x, z, t).v);
    let b_ex = ScalarField::from_fn(h, |x, _, _| obm_b1(x, t).v);
    let error = rms(end.theta1.data(), th_ex.data()) + rms(end.b1.data(), b_ex.data());
    debug_assert!((fields::mean(&end.theta1) - fields::mean(&th_ex)).abs() < 1.0);
    Ok(MmsLevel {
        n1,
        n3,
        steps,
        error,
        max_div_b: None,
        min_production_term: None,
        mean_b1_drift: Some(b_drift),
    })
}

pub fn obm_study(gas: &Gas, rf: &ReferenceState, s: &ObmMmsSettings) -> Result<MmsStudy> {
    if s.n3_levels.len() < 2 {
        return Err(Error::Config("a convergence study needs at least two levels".into()));
    }
    let levels = s
        .n3_levels
        .iter()
        .map(|&n3| obm_level(gas, rf, s, s.n1, n3))
        .collect::<Result<Vec<_>>>()?;
    let horizontal = obm_level(gas, rf, s, 2 * s.n1, s.n3_levels[0])?;
    Ok(MmsStudy { solver: "obm", orders: orders(&levels), levels, horizontal })
}
