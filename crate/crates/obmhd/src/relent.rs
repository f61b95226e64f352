//! Relative energy between a primitive state and a test quadruple
//! `(r, Θ, U, H)`, its essential/residual split, coercivity constants,
//! well-prepared data and the ε-sweep convergence harness.
//!
//! The thermal part of the relative energy is the Bregman divergence of the
//! energy `Φ(ρ, S) = ρe` in the conservative variables `(ρ, S = ρs)`, taken at
//! `(r, rs(r,Θ))`. Coercivity constants are therefore bounded below by the
//! smallest Hessian eigenvalue of `Φ` over the convex hull of the essential
//! box, which is what [`CoercivityConstants::compute`] samples.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fields::{self, Grid, ScalarField, VectorField};
use crate::mhd::{MhdConfig, MhdSolver, PrimitiveState};
use crate::obm::{default_potential, LimitModel, ObmConfig, ObmSolver, ObmState, WallProfile};
use crate::thermo::{Gas, ReferenceState};
use crate::{Error, Result};

/// Tolerance on `div H` and on the wall conditions of a test quadruple.
pub const DIV_TOL: f64 = 1e-8;
const WALL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePoint {
    pub rho: f64,
    pub theta: f64,
    pub u: [f64; 3],
    pub b: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestPoint {
    pub r: f64,
    pub big_theta: f64,
    pub u: [f64; 3],
    pub h: [f64; 3],
}

impl TestPoint {
    /// The state that coincides with this test point.
    pub fn as_state(&self) -> StatePoint {
        StatePoint { rho: self.r, theta: self.big_theta, u: self.u, b: self.h }
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

fn norm2(a: [f64; 3]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// `ρe − Θ(ρs − rs(r,Θ)) − (e + p/r − Θs)(r,Θ)·(ρ − r) − re(r,Θ)`.
pub(crate) fn thermal_raw(gas: &Gas, rho: f64, theta: f64, r: f64, big: f64) -> f64 {
    let rs = gas.rho_s_raw(r, big);
    let re = gas.rho_e_raw(r, big);
    let gibbs = (re + gas.p_raw(r, big) - big * rs) / r;
    gas.rho_e_raw(rho, theta) - big * (gas.rho_s_raw(rho, theta) - rs) - gibbs * (rho - r) - re
}

fn check_points(sp: &StatePoint, tp: &TestPoint, eps: f64) -> Result<()> {
    if !(tp.r > 0.0 && tp.big_theta > 0.0) || !tp.r.is_finite() || !tp.big_theta.is_finite() {
        return Err(Error::Domain(format!("test point needs r, Θ > 0, got ({}, {})", tp.r, tp.big_theta)));
    }
    if !(sp.rho >= 0.0 && sp.theta > 0.0) || !sp.rho.is_finite() || !sp.theta.is_finite() {
        return Err(Error::Domain(format!("state needs ρ >= 0, θ > 0, got ({}, {})", sp.rho, sp.theta)));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("ε must be positive, got {eps}")));
    }
    if sp.u.iter().chain(&sp.b).chain(&tp.u).chain(&tp.h).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("relative energy arguments".into()));
    }
    Ok(())
}

/// Pointwise scaled relative energy.
pub fn rel_energy_density(gas: &Gas, sp: &StatePoint, tp: &TestPoint, eps: f64) -> Result<f64> {
    check_points(sp, tp, eps)?;
    Ok(rel_energy_raw(gas, sp, tp, eps))
}

fn rel_energy_raw(gas: &Gas, sp: &StatePoint, tp: &TestPoint, eps: f64) -> f64 {
    let kinetic = 0.5 * sp.rho * dist2(sp.u, tp.u);
    let magnetic = 0.5 * dist2(sp.b, tp.h);
    let thermal = thermal_raw(gas, sp.rho, sp.theta, tp.r, tp.big_theta);
    kinetic + (magnetic + thermal) / (eps * eps)
}

/// Hessian of `(ρ, S) ↦ ρe` at the point with density `rho` and temperature
/// `theta`.
pub fn energy_hessian(gas: &Gas, rho: f64, theta: f64) -> [[f64; 2]; 2] {
    let rs_t = rho * gas.ds_dtheta_raw(rho, theta);
    let w = gas.dp_dtheta_raw(rho, theta) / rho - gas.s_raw(rho, theta);
    let h11 = gas.dp_drho_raw(rho, theta) / rho + w * w / rs_t;
    [[h11, w / rs_t], [w / rs_t, 1.0 / rs_t]]
}

/// Eigenvalues `(λ_min, λ_max)` of a symmetric 2×2 matrix.
fn eig2(h: [[f64; 2]; 2]) -> (f64, f64) {
    let half_tr = 0.5 * (h[0][0] + h[1][1]);
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let disc = (half_tr * half_tr - det).max(0.0).sqrt();
    let max = half_tr + disc;
    (if max > 0.0 { det / max } else { half_tr - disc }, max)
}

/// `∇θ` in the conservative variables `(ρ, S)`.
fn theta_gradient(gas: &Gas, rho: f64, theta: f64) -> [f64; 2] {
    let rs_t = rho * gas.ds_dtheta_raw(rho, theta);
    let s_rho = gas.s_raw(rho, theta) + rho * gas.ds_drho_raw(rho, theta);
    [-s_rho / rs_t, 1.0 / rs_t]
}

/// Temperature with `ρs(ρ, θ) = S`, by bisection (ρs increases with θ).
fn invert_entropy(gas: &Gas, rho: f64, s: f64, guess: f64) -> Result<f64> {
    let f = |t: f64| gas.rho_s_raw(rho, t) - s;
    let (mut lo, mut hi) = (0.5 * guess, 2.0 * guess);
    for _ in 0..200 {
        if f(lo) <= 0.0 {
            break;
        }
        lo *= 0.5;
    }
    for _ in 0..200 {
        if f(hi) >= 0.0 {
            break;
        }
        hi *= 2.0;
    }
    if !(f(lo) <= 0.0 && f(hi) >= 0.0) {
        return Err(Error::Numerical(format!("cannot bracket θ for ρ = {rho}, S = {s}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The essential set `½ϱ̄ ≤ ρ ≤ 2ϱ̄`, `½ϑ̄ ≤ θ ≤ 2ϑ̄`.
pub fn in_essential(rho: f64, theta: f64, rf: &ReferenceState) -> bool {
    (0.5 * rf.rho_bar..=2.0 * rf.rho_bar).contains(&rho) && (0.5 * rf.theta_bar..=2.0 * rf.theta_bar).contains(&theta)
}

/// `ε⁻²|ρ−r|² + ε⁻²|θ−Θ|² + |u−U|² + ε⁻²|B−H|²`.
pub fn ess_bracket(sp: &StatePoint, tp: &TestPoint, eps: f64) -> f64 {
    let thermo = (sp.rho - tp.r).powi(2) + (sp.theta - tp.big_theta).powi(2);
    (thermo + dist2(sp.b, tp.h)) / (eps * eps) + dist2(sp.u, tp.u)
}

/// `ε⁻²(1 + ρe + ρ|s|) + ρ|u|² + ε⁻²|B|²`.
pub fn res_bracket(gas: &Gas, sp: &StatePoint, eps: f64) -> f64 {
    let x = 1.0 + gas.rho_e_raw(sp.rho, sp.theta) + gas.rho_s_raw(sp.rho, sp.theta).abs();
    (x + norm2(sp.b)) / (eps * eps) + sp.rho * norm2(sp.u)
}

/// Admissible range of test points for which the constants are valid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestBounds {
    pub u_max: f64,
    pub h_max: f64,
    /// `r/ϱ̄` and `Θ/ϑ̄` must lie in `[box_lo, box_hi] ⊂ [½, 2]`.
    pub box_lo: f64,
    pub box_hi: f64,
}

impl Default for TestBounds {
    fn default() -> Self {
        TestBounds { u_max: 1.0, h_max: 2.0, box_lo: 0.75, box_hi: 1.5 }
    }
}

impl TestBounds {
    fn validate(&self) -> Result<()> {
        if !(0.5 <= self.box_lo && self.box_lo <= self.box_hi && self.box_hi <= 2.0) {
            return Err(Error::Config(format!(
                "test box [{}, {}] must lie inside [1/2, 2]",
                self.box_lo, self.box_hi
            )));
        }
        if !(self.u_max >= 0.0 && self.h_max >= 0.0) {
            return Err(Error::Config("test bounds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn admits(&self, tp: &TestPoint, rf: &ReferenceState) -> bool {
        let tol = 1e-12;
        let in_box = |v: f64, bar: f64| {
            v >= self.box_lo * bar * (1.0 - tol) && v <= self.box_hi * bar * (1.0 + tol)
        };
        in_box(tp.r, rf.rho_bar)
            && in_box(tp.big_theta, rf.theta_bar)
            && norm2(tp.u).sqrt() <= self.u_max * (1.0 + tol)
            && norm2(tp.h).sqrt() <= self.h_max * (1.0 + tol)
    }
}

/// Lower bounds in
/// `[E_ε]_ess ≥ c_ess·[ess bracket]` and `[E_ε]_res ≥ c_res·[res bracket]`.
///
/// The residual constant is sampled for states with `ρ/ϱ̄, θ/ϑ̄` in
/// `{0} ∪ [1e-4, 1e4]` and assumes `ε ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityConstants {
    pub c_ess: f64,
    pub c_res: f64,
    /// Smallest Hessian eigenvalue of `Φ` over the hull of the essential box.
    pub lambda_min: f64,
    /// Largest `|∇θ(ρ, S)|` over the same hull.
    pub lipschitz: f64,
    /// Lower bound of `E_thermal/(1 + ρe + ρ|s|)` on the residual set.
    pub m_thermal: f64,
    /// Upper bound of `ρ/(1 + ρe + ρ|s|)` on the residual set.
    pub k_rho: f64,
    pub bounds: TestBounds,
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
}

/// Convex hull (counter-clockwise) by the monotone chain.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite hull points"));
    pts.dedup();
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// `(min, max)` of the hull's vertical section at `x`.
fn hull_section(hull: &[(f64, f64)], x: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        let (x0, x1) = (a.0.min(b.0), a.0.max(b.0));
        if x < x0 || x > x1 {
            continue;
        }
        let ys: Vec<f64> = if x1 == x0 {
            vec![a.1, b.1]
        } else {
            vec![a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)]
        };
        for y in ys {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

impl CoercivityConstants {
    pub fn compute(gas: &Gas, rf: &ReferenceState, bounds: TestBounds) -> Result<Self> {
        rf.validate()?;
        bounds.validate()?;
        let (rb, tb) = (rf.rho_bar, rf.theta_bar);

        // Image of the essential box in (ρ, S) and its convex hull.
        let edge = 200;
        let mut pts = Vec::with_capacity(4 * (edge + 1));
        for f in linspace(0.5, 2.0, edge + 1) {
            let (rho, th) = (f * rb, f * tb);
            pts.push((rho, gas.rho_s_raw(rho, 0.5 * tb)));
            pts.push((rho, gas.rho_s_raw(rho, 2.0 * tb)));
            pts.push((0.5 * rb, gas.rho_s_raw(0.5 * rb, th)));
            pts.push((2.0 * rb, gas.rho_s_raw(2.0 * rb, th)));
        }
        if pts.iter().any(|p| !p.1.is_finite()) {
            return Err(Error::Numerical("entropy is not finite on the essential box".into()));
        }
        let hull = convex_hull(pts);
        let mut lambda_min = f64::INFINITY;
        let mut lipschitz: f64 = 0.0;
        let n = 121;
        for rho in linspace(0.5 * rb, 2.0 * rb, n) {
            let (lo, hi) = hull_section(&hull, rho)
                .ok_or_else(|| Error::Numerical(format!("empty hull section at ρ = {rho}")))?;
            for s in linspace(lo, hi, n) {
                let theta = invert_entropy(gas, rho, s, tb)?;
                let (lmin, _) = eig2(energy_hessian(gas, rho, theta));
                let [gr, gs] = theta_gradient(gas, rho, theta);
                lambda_min = lambda_min.min(lmin);
                lipschitz = lipschitz.max(gr.hypot(gs));
            }
        }
        if !(lambda_min > 0.0) || !lipschitz.is_finite() {
            return Err(Error::Numerical(format!(
                "energy is not strictly convex on the essential box (λ_min = {lambda_min:e})"
            )));
        }
        let c_ess = 0.95 * (0.5 * lambda_min / (1.0 + lipschitz * lipschitz)).min(0.25 * rb).min(0.5);

        // Residual set: states outside the box (closure), tested against a
        // grid of admissible test points.
        let mut axis: Vec<f64> = linspace(-4.0, 4.0, 161).map(|e| 10f64.powf(e)).collect();
        axis.extend(linspace(0.5, 2.0, 31));
        axis.sort_by(|a, b| a.partial_cmp(b).expect("finite axis"));
        axis.dedup();
        let tests: Vec<(f64, f64)> = linspace(bounds.box_lo, bounds.box_hi, 7)
            .flat_map(|fr| linspace(bounds.box_lo, bounds.box_hi, 7).map(move |ft| (fr * rb, ft * tb)))
            .collect();
        let outside = |f: f64| f <= 0.5 || f >= 2.0;
        let mut m_thermal = f64::INFINITY;
        let mut k_rho: f64 = 0.0;
        for &fr in std::iter::once(&0.0).chain(&axis) {
            for &ft in &axis {
                if !(outside(fr) || outside(ft)) {
                    continue;
                }
                let (rho, theta) = (fr * rb, ft * tb);
                let x = 1.0 + gas.rho_e_raw(rho, theta) + gas.rho_s_raw(rho, theta).abs();
                k_rho = k_rho.max(rho / x);
                for &(r, big) in &tests {
                    m_thermal = m_thermal.min(thermal_raw(gas, rho, theta, r, big) / x);
                }
            }
        }
        if !(m_thermal > 0.0) {
            return Err(Error::Numerical(format!("residual coercivity fails (m = {m_thermal:e})")));
        }
        let m_thermal = 0.9 * m_thermal;
        let k_rho = 1.1 * k_rho;
        let u2 = bounds.u_max * bounds.u_max;
        let h2 = bounds.h_max * bounds.h_max;
        let c_res = 1.0 / ((1.0 + 2.0 * u2 * k_rho + 2.0 * h2) / m_thermal).max(4.0);
        Ok(CoercivityConstants { c_ess, c_res, lambda_min, lipschitz, m_thermal, k_rho, bounds })
    }

    /// [`CoercivityConstants::compute`], memoised per (gas, reference, bounds).
    pub fn cached(gas: &Gas, rf: &ReferenceState, bounds: TestBounds) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<String, Arc<CoercivityConstants>>>> = OnceLock::new();
        let key = format!("{gas:?}|{rf:?}|{bounds:?}");
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(c) = cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(c));
        }
        let c = Arc::new(Self::compute(gas, rf, bounds)?);
        cache.lock().expect("cache lock").insert(key, Arc::clone(&c));
        Ok(c)
    }
}

/// Outcome of the coercivity inequality at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCheck {
    pub essential: bool,
    pub energy: f64,
    /// `c·bracket` of the set the state belongs to.
    pub bound: f64,
}

impl PointCheck {
    pub fn margin(&self) -> f64 {
        self.energy - self.bound
    }

    pub fn holds(&self) -> bool {
        self.energy >= self.bound - 1e-13 * (1.0 + self.bound.abs())
    }
}

pub fn coercivity_point(
    gas: &Gas,
    rf: &ReferenceState,
    consts: &CoercivityConstants,
    sp: &StatePoint,
    tp: &TestPoint,
    eps: f64,
) -> Result<PointCheck> {
    check_points(sp, tp, eps)?;
    if eps > 1.0 {
        return Err(Error::Domain(format!("coercivity constants assume ε <= 1, got {eps}")));
    }
    if !consts.bounds.admits(tp, rf) {
        return Err(Error::Domain(format!("test point {tp:?} outside the admissible bounds")));
    }
    let energy = rel_energy_raw(gas, sp, tp, eps);
    let essential = in_essential(sp.rho, sp.theta, rf);
    let bound = if essential {
        consts.c_ess * ess_bracket(sp, tp, eps)
    } else {
        consts.c_res * res_bracket(gas, sp, eps)
    };
    Ok(PointCheck { essential, energy, bound })
}

// ---------------------------------------------------------------------------
// field level

/// Smooth test functions `(r, Θ, U, H)` with the positivity and boundary
/// conditions checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TestQuadruple {
    pub r: ScalarField,
    pub theta: ScalarField,
    pub u: VectorField,
    pub h: VectorField,
}

impl TestQuadruple {
    /// `theta_b` is the wall datum: `Θ = ϑ̄ + εϑ_B` on both walls.
    pub fn new(
        r: ScalarField,
        theta: ScalarField,
        u: VectorField,
        h: VectorField,
        eps: f64,
        rf: &ReferenceState,
        theta_b: &WallProfile,
    ) -> Result<Self> {
        let grid = *r.grid();
        if *theta.grid() != grid || *u.grid() != grid || *h.grid() != grid {
            return Err(Error::Field("test quadruple on mixed grids".into()));
        }
        r.check_finite("r")?;
        theta.check_finite("Θ")?;
        u.check_finite("U")?;
        h.check_finite("H")?;
        if !(r.min() > 0.0 && theta.min() > 0.0) {
            return Err(Error::Domain(format!("test functions need r, Θ > 0 (min r = {}, min Θ = {})", r.min(), theta.min())));
        }
        if grid.geometry.is_strip() {
            let l = grid.layer_len();
            if theta_b.bottom.len() != l || theta_b.top.len() != l {
                return Err(Error::Config("wall profile does not match the grid".into()));
            }
            let top = l * (grid.n3 - 1);
            for (base, wall) in [(0, &theta_b.bottom), (top, &theta_b.top)] {
                for c in 0..l {
                    let want = rf.theta_bar + eps * wall[c];
                    if (theta.data()[base + c] - want).abs() > WALL_TOL * want.abs().max(1.0) {
                        return Err(Error::Domain("Θ does not match the wall temperature".into()));
                    }
                    if u.comp(2)[base + c].abs() > WALL_TOL {
                        return Err(Error::Domain("U·n must vanish on the walls".into()));
                    }
                    if h.comp(0)[base + c].abs() > WALL_TOL || h.comp(1)[base + c].abs() > WALL_TOL {
                        return Err(Error::Domain("H×n must vanish on the walls".into()));
                    }
                }
            }
        }
        let dh = fields::div(&h)?.max_abs();
        if dh > DIV_TOL {
            return Err(Error::Domain(format!("H must be solenoidal, max |div H| = {dh:e}")));
        }
        Ok(TestQuadruple { r, theta, u, h })
    }

    pub fn grid(&self) -> &Grid {
        self.r.grid()
    }

    pub fn point(&self, i: usize) -> TestPoint {
        TestPoint {
            r: self.r.data()[i],
            big_theta: self.theta.data()[i],
            u: [self.u.comp(0)[i], self.u.comp(1)[i], self.u.comp(2)[i]],
            h: [self.h.comp(0)[i], self.h.comp(1)[i], self.h.comp(2)[i]],
        }
    }

    /// The primitive state equal to the test functions.
    pub fn as_state(&self, eps: f64) -> PrimitiveState {
        PrimitiveState {
            rho: self.r.clone(),
            u: self.u.clone(),
            theta: self.theta.clone(),
            b: self.h.clone(),
            eps,
            t: 0.0,
        }
    }
}

fn state_point(s: &PrimitiveState, i: usize) -> StatePoint {
    StatePoint {
        rho: s.rho.data()[i],
        theta: s.theta.data()[i],
        u: [s.u.comp(0)[i], s.u.comp(1)[i], s.u.comp(2)[i]],
        b: [s.b.comp(0)[i], s.b.comp(1)[i], s.b.comp(2)[i]],
    }
}

fn check_pair(state: &PrimitiveState, test: &TestQuadruple) -> Result<()> {
    if state.grid() != test.grid() {
        return Err(Error::Field("state and test functions on different grids".into()));
    }
    Ok(())
}

/// Quadrature weight of every grid point (sums to the domain volume).
fn weights(grid: &Grid) -> Vec<f64> {
    let vw = grid.vertical_weights();
    let cell = grid.volume() / grid.layer_len() as f64;
    (0..grid.len()).map(|i| cell * vw[i / grid.layer_len()]).collect()
}

/// Essential/residual decomposition of the integrated relative energy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySplit {
    /// `1` on the essential set, `0` elsewhere.
    pub indicator: ScalarField,
    pub density: ScalarField,
    pub total: f64,
    pub ess: f64,
    pub res: f64,
}

pub fn ess_res_split(gas: &Gas, rf: &ReferenceState, state: &PrimitiveState, test: &TestQuadruple) -> Result<EnergySplit> {
    check_pair(state, test)?;
    let grid = *state.grid();
    let w = weights(&grid);
    let eps = state.eps;
    let mut ind = vec![0.0; grid.len()];
    let mut dens = vec![0.0; grid.len()];
    let (mut total, mut ess) = (0.0, 0.0);
    for i in 0..grid.len() {
        let (sp, tp) = (state_point(state, i), test.point(i));
        let e = rel_energy_density(gas, &sp, &tp, eps)?;
        dens[i] = e;
        total += w[i] * e;
        if in_essential(sp.rho, sp.theta, rf) {
            ind[i] = 1.0;
            ess += w[i] * e;
        }
    }
    Ok(EnergySplit {
        indicator: ScalarField::from_vec(grid, ind),
        density: ScalarField::from_vec(grid, dens),
        total,
        ess,
        res: total - ess,
    })
}

/// Integrated relative energy `∫E_ε`.
pub fn relative_energy(gas: &Gas, state: &PrimitiveState, test: &TestQuadruple) -> Result<f64> {
    check_pair(state, test)?;
    let grid = *state.grid();
    let w = weights(&grid);
    let mut total = 0.0;
    for (i, wi) in w.iter().enumerate() {
        total += wi * rel_energy_density(gas, &state_point(state, i), &test.point(i), state.eps)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityReport {
    pub ess_points: usize,
    pub res_points: usize,
    pub violations: usize,
    /// Integrated left and right sides on each set.
    pub e_ess: f64,
    pub rhs_ess: f64,
    pub e_res: f64,
    pub rhs_res: f64,
    pub min_margin_ess: f64,
    pub min_margin_res: f64,
    /// `min E/bound` over points with a positive bound.
    pub min_ratio: f64,
}

impl CoercivityReport {
    pub fn holds(&self) -> bool {
        self.violations == 0 && self.e_ess >= self.rhs_ess * (1.0 - 1e-12) && self.e_res >= self.rhs_res * (1.0 - 1e-12)
    }
}

pub fn coercivity_check(
    gas: &Gas,
    rf: &ReferenceState,
    consts: &CoercivityConstants,
    state: &PrimitiveState,
    test: &TestQuadruple,
) -> Result<CoercivityReport> {
    check_pair(state, test)?;
    let grid = *state.grid();
    let w = weights(&grid);
    let mut rep = CoercivityReport {
        ess_points: 0,
        res_points: 0,
        violations: 0,
        e_ess: 0.0,
        rhs_ess: 0.0,
        e_res: 0.0,
        rhs_res: 0.0,
        min_margin_ess: f64::INFINITY,
        min_margin_res: f64::INFINITY,
        min_ratio: f64::INFINITY,
    };
    for i in 0..grid.len() {
        let pc = coercivity_point(gas, rf, consts, &state_point(state, i), &test.point(i), state.eps)?;
        if !pc.holds() {
            rep.violations += 1;
        }
        if pc.bound > 0.0 {
            rep.min_ratio = rep.min_ratio.min(pc.energy / pc.bound);
        }
        if pc.essential {
            rep.ess_points += 1;
            rep.e_ess += w[i] * pc.energy;
            rep.rhs_ess += w[i] * pc.bound;
            rep.min_margin_ess = rep.min_margin_ess.min(pc.margin());
        } else {
            rep.res_points += 1;
            rep.e_res += w[i] * pc.energy;
            rep.rhs_res += w[i] * pc.bound;
            rep.min_margin_res = rep.min_margin_res.min(pc.margin());
        }
    }
    Ok(rep)
}

/// Time series of the relative energy along a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelEnergyReport {
    pub times: Vec<f64>,
    pub e_total: Vec<f64>,
    pub e_ess: Vec<f64>,
    pub e_res: Vec<f64>,
    /// `∫(Θ/θ)(𝕊:∇u + ε⁻²κ|∇θ|²/θ + ε⁻²ζ|curl B|²)`.
    pub dissipation: Vec<f64>,
    pub sup_e: f64,
}

impl RelEnergyReport {
    pub fn push(&mut self, t: f64, split: &EnergySplit, dissipation: f64) {
        self.times.push(t);
        self.e_total.push(split.total);
        self.e_ess.push(split.ess);
        self.e_res.push(split.res);
        self.dissipation.push(dissipation);
        self.sup_e = self.sup_e.max(split.total);
    }

    pub fn sup_ess(&self) -> f64 {
        self.e_ess.iter().fold(0.0, |m, &v| m.max(v))
    }

    pub fn sup_res(&self) -> f64 {
        self.e_res.iter().fold(0.0, |m, &v| m.max(v))
    }
}

/// The ε-scaled dissipation integrand of the relative energy inequality,
/// integrated over the domain.
pub fn dissipation_integral(solver: &MhdSolver, state: &PrimitiveState, test: &TestQuadruple) -> Result<f64> {
    check_pair(state, test)?;
    let terms = solver.entropy_production_terms(state)?;
    let w = weights(state.grid());
    let e2 = state.eps * state.eps;
    Ok((0..w.len())
        .map(|i| {
            let sum: f64 = terms.iter().map(|t| t.data()[i]).sum();
            w[i] * test.theta.data()[i] * sum / e2
        })
        .sum())
}

// ---------------------------------------------------------------------------
// well-prepared data

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    /// `ϑ¹₀ = sin(πx3)(1 + ½cos πx1)`, `b¹₀ = ½cos πx1`,
    /// `U₀ = (sin πx2, sin πx1, 0)`.
    Smooth,
    /// A few random low modes of the same structure.
    Random { seed: u64 },
}

/// Initial profiles `(ϑ¹₀, b¹₀, U₀)`, each scaled by its amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profiles {
    pub kind: ProfileKind,
    pub theta_amp: f64,
    pub b_amp: f64,
    pub u_amp: f64,
}

impl Profiles {
    pub fn zero() -> Self {
        Profiles { kind: ProfileKind::Smooth, theta_amp: 0.0, b_amp: 0.0, u_amp: 0.0 }
    }

    /// Smooth temperature and field perturbations, fluid at rest.
    pub fn smooth() -> Self {
        Profiles { kind: ProfileKind::Smooth, theta_amp: 1.0, b_amp: 1.0, u_amp: 0.0 }
    }

    /// `(U₀, ϑ¹₀, b¹₀)` on the solver's grids.
    pub fn fields(&self, obm: &ObmSolver) -> (VectorField, ScalarField, ScalarField) {
        use std::f64::consts::PI;
        let grid = obm.config().grid;
        let hg = *obm.horizontal_grid();
        let (ta, ba, ua) = (self.theta_amp, self.b_amp, self.u_amp);
        match self.kind {
            ProfileKind::Smooth => (
                VectorField::from_fn(hg, |x, y, _| [ua * (PI * y).sin(), ua * (PI * x).sin(), 0.0]),
                ScalarField::from_fn(grid, |x, _, z| ta * (PI * z).sin() * (1.0 + 0.5 * (PI * x).cos())),
                ScalarField::from_fn(hg, |x, _, _| ba * 0.5 * (PI * x).cos()),
            ),
            ProfileKind::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let ny = if grid.n2 > 1 { 2 } else { 0 };
                let mut mode = |scale: f64| (rng.gen_range(-1.0..1.0) * scale, rng.gen_range(0.0..2.0 * PI));
                let theta_modes: Vec<_> = (0..3)
                    .flat_map(|m| (1..4).map(move |j| (m, j)))
                    .map(|(m, j)| (m, j, mode(1.0 / (1 + m + j) as f64)))
                    .collect();
                let hmodes: Vec<_> = (0..4)
                    .flat_map(|m| (0..=ny).map(move |n| (m, n)))
                    .filter(|&(m, n)| m + n > 0)
                    .map(|(m, n)| (m, n, mode(1.0 / (m + n) as f64), mode(1.0 / (m + n) as f64)))
                    .collect();
                let tnorm: f64 = theta_modes.iter().map(|(_, _, (c, _))| c.abs()).sum::<f64>().max(1e-300);
                let bnorm: f64 = hmodes.iter().map(|(_, _, (c, _), _)| c.abs()).sum::<f64>().max(1e-300);
                let unorm: f64 = hmodes
                    .iter()
                    .map(|&(m, n, _, (c, _))| c.abs() * PI * (m.max(n)) as f64)
                    .sum::<f64>()
                    .max(1e-300);
                let theta = ScalarField::from_fn(grid, |x, _, z| {
                    ta / tnorm
                        * theta_modes
                            .iter()
                            .map(|&(m, j, (c, ph))| c * (PI * m as f64 * x + ph).cos() * (PI * j as f64 * z).sin())
                            .sum::<f64>()
                });
                let b1 = ScalarField::from_fn(hg, |x, y, _| {
                    ba / bnorm
                        * hmodes
                            .iter()
                            .map(|&(m, n, (c, ph), _)| c * (PI * (m as f64 * x + n as f64 * y) + ph).cos())
                            .sum::<f64>()
                });
                // U₀ = (∂2ψ, −∂1ψ) for ψ = Σ c cos(π(m x1 + n x2) + φ).
                let u = VectorField::from_fn(hg, |x, y, _| {
                    let mut v = [0.0; 3];
                    for &(m, n, _, (c, ph)) in &hmodes {
                        let s = (PI * (m as f64 * x + n as f64 * y) + ph).sin();
                        v[0] -= c * PI * n as f64 * s;
                        v[1] += c * PI * m as f64 * s;
                    }
                    [ua / unorm * v[0], ua / unorm * v[1], 0.0]
                });
                (u, theta, b1)
            }
        }
    }
}

/// Test functions built from a limit state:
/// `(ϱ̄ + εϱ¹, ϑ̄ + εϑ¹, U, B̄ + ε(0,0,b¹))`.
pub fn test_quadruple(obm: &ObmSolver, state: &ObmState, eps: f64) -> Result<TestQuadruple> {
    let cfg = obm.config();
    let grid = cfg.grid;
    let rf = &cfg.reference;
    let rho1 = obm.boussinesq_rho(&state.theta1, &state.b1)?;
    let b1 = state.b1.broadcast(&grid)?;
    let r = rho1.map(|v| rf.rho_bar + eps * v);
    let theta = state.theta1.map(|v| rf.theta_bar + eps * v);
    let u = state.u.broadcast(&grid)?;
    let b3 = b1.map(|v| rf.b_bar + eps * v);
    let h = VectorField::from_scalars(ScalarField::zeros(grid), ScalarField::zeros(grid), b3)?;
    TestQuadruple::new(r, theta, u, h, eps, rf, &cfg.theta_b)
}

/// Well-prepared initial data from explicit fields: `U₀` on the horizontal
/// grid (divergence-free, horizontal), `ϑ¹₀` on the strip, `b¹₀` on the
/// horizontal grid. The primitive state equals the test functions of the
/// returned limit state, so the initial relative energy vanishes.
pub fn well_prepared_from(
    u0: VectorField,
    theta1: ScalarField,
    b1: ScalarField,
    eps: f64,
    obm: &ObmSolver,
) -> Result<(PrimitiveState, ObmState)> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("ε must be positive, got {eps}")));
    }
    let hg = *obm.horizontal_grid();
    if *u0.grid() != hg {
        return Err(Error::Field("U₀ must live on the horizontal grid".into()));
    }
    u0.check_finite("U₀")?;
    if u0.comp(2).iter().any(|&v| v != 0.0) {
        return Err(Error::Config("U₀ must be horizontal".into()));
    }
    let umax = u0.max_abs();
    if obm.config().grid.n2 == 1 && umax > 0.0 {
        return Err(Error::Config("the 2.5D limit carries U = 0; U₀ must vanish".into()));
    }
    let d = fields::div_h_raw(&hg, u0.comp(0), u0.comp(1));
    let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if dmax > 1e-10 * (1.0 + umax * hg.max_wavenumber()) {
        return Err(Error::Config(format!("U₀ must be divergence-free, max |div U₀| = {dmax:e}")));
    }
    let state = obm.initial_state(u0, theta1, b1)?;
    let test = test_quadruple(obm, &state, eps)?;
    let prim = test.as_state(eps);
    prim.validate()?;
    Ok((prim, state))
}

pub fn well_prepared_data(profiles: &Profiles, eps: f64, obm: &ObmSolver) -> Result<(PrimitiveState, ObmState)> {
    let (u0, theta1, b1) = profiles.fields(obm);
    well_prepared_from(u0, theta1, b1, eps, obm)
}

/// `max |∂ρp∇ϱ¹ + ∂θp∇ϑ¹ − ϱ̄∇G − curlB¹×B̄|` with `B¹ = (0,0,b¹)`.
///
/// The Boussinesq relation makes this vanish identically; note that
/// `curlB¹×B̄ = −∇(b̄b¹)`.
pub fn compatibility_residual(obm: &ObmSolver, state: &ObmState) -> Result<f64> {
    let cfg = obm.config();
    let c = obm.coefficients();
    let grid = cfg.grid;
    let rho1 = obm.boussinesq_rho(&state.theta1, &state.b1)?;
    let gr = fields::grad(&rho1)?;
    let gt = fields::grad(&state.theta1)?;
    let gg = fields::grad(&cfg.g)?;
    let b1 = state.b1.broadcast(&grid)?;
    let j = fields::curl(&VectorField::from_scalars(ScalarField::zeros(grid), ScalarField::zeros(grid), b1)?)?;
    // (j1, j2, j3) × (0, 0, b̄) = b̄(j2, −j1, 0)
    let lorentz = [
        j.comp(1).iter().map(|v| c.b_bar * v).collect::<Vec<_>>(),
        j.comp(0).iter().map(|v| -c.b_bar * v).collect(),
        vec![0.0; grid.len()],
    ];
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        for i in 0..grid.len() {
            let r = c.dp_drho * gr.comp(k)[i] + c.dp_dtheta * gt.comp(k)[i] - c.rho_bar * gg.comp(k)[i] - lorentz[k][i];
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// convergence study

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub gas: Gas,
    pub reference: ReferenceState,
    pub grid: Grid,
    /// Decreasing.
    pub eps_list: Vec<f64>,
    pub t_end: f64,
    /// Primitive steps between samples of the relative energy.
    pub cadence: usize,
    pub cfl: f64,
    pub profiles: Profiles,
    /// `G = ½ − x3` if set, `G = 0` otherwise.
    pub gravity: bool,
    /// Limit equations the primitive runs are compared against.
    pub model: LimitModel,
    pub bounds: TestBounds,
    /// Limit-solver step as a fraction of `h3` (upper bound).
    pub obm_dt_factor: f64,
    /// Ceiling for the uniform-bound monitors.
    pub monitor_ceiling: f64,
    pub parallel: bool,
}

impl StudyConfig {
    pub fn new(gas: Gas, reference: ReferenceState, grid: Grid, eps_list: Vec<f64>) -> Self {
        StudyConfig {
            gas,
            reference,
            grid,
            eps_list,
            t_end: 0.25,
            cadence: 10,
            cfl: 0.35,
            profiles: Profiles::smooth(),
            gravity: true,
            model: LimitModel::Consistent,
            bounds: TestBounds::default(),
            obm_dt_factor: 0.25,
            monitor_ceiling: 1e3,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_list.is_empty() {
            return Err(Error::Config("eps_list is empty".into()));
        }
        if self.eps_list.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::Config("every ε must lie in (0, 1]".into()));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("eps_list must be strictly decreasing".into()));
        }
        if !self.grid.geometry.is_strip() {
            return Err(Error::Config("the convergence study runs on a strip grid".into()));
        }
        if self.cadence == 0 || !(self.t_end > 0.0) || !(self.obm_dt_factor > 0.0) {
            return Err(Error::Config("cadence, t_end and obm_dt_factor must be positive".into()));
        }
        self.bounds.validate()
    }
}

/// L² deviations of the scaled primitive fields from the limit.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Deviations {
    /// `‖(ρ − ϱ̄)/ε − ϱ¹‖`
    pub rho: f64,
    /// `‖(θ − ϑ̄)/ε − ϑ¹‖`
    pub theta: f64,
    /// `‖(B − B̄)/ε − B¹‖`
    pub b: f64,
    /// `‖√ρ u − √ϱ̄ U‖`
    pub momentum: f64,
}

impl Deviations {
    fn max(self, o: Deviations) -> Deviations {
        Deviations {
            rho: self.rho.max(o.rho),
            theta: self.theta.max(o.theta),
            b: self.b.max(o.b),
            momentum: self.momentum.max(o.momentum),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.rho, self.theta, self.b, self.momentum]
    }
}

/// Outcome of the run at one ε.
#[derive(Debug)]
pub struct EpsRun {
    pub eps: f64,
    pub report: RelEnergyReport,
    pub sup_dev: Deviations,
    pub final_dev: Deviations,
    /// `ε⁻² sup_t ‖B − B̄‖²`.
    pub b_bound: f64,
    /// `‖u‖_{L²(0,T;W^{1,2})}`.
    pub u_bound: f64,
    pub steps: usize,
    pub mhd_dt: f64,
    pub obm_dt: f64,
    /// `max_t |M(t) − M(0)|/M(0)`.
    pub mass_drift: f64,
    pub max_div_b: f64,
    pub min_production_term: f64,
    /// `max_t |⟨b¹⟩(t) − ⟨b¹⟩(0)|` of the limit solution.
    pub mean_b1_drift: f64,
    pub max_div_u: f64,
    pub failure: Option<Error>,
}

impl EpsRun {
    pub fn monitors_bounded(&self, ceiling: f64) -> bool {
        self.b_bound <= ceiling && self.u_bound <= ceiling
    }
}

#[derive(Debug)]
pub struct StudyReport {
    pub runs: Vec<EpsRun>,
    /// Least-squares slope of `log sup E_ε` against `log ε`.
    pub rate: Option<f64>,
    pub monitor_ceiling: f64,
}

impl StudyReport {
    pub const CSV_HEADER: &'static str = "eps,sup_E,sup_E_ess,sup_E_res,dev_rho,dev_theta,dev_b,dev_momentum,\
sup_dev_rho,sup_dev_theta,sup_dev_b,sup_dev_momentum,b_bound,u_bound,status";

    pub fn csv_rows(&self) -> Vec<String> {
        self.runs
            .iter()
            .map(|r| {
                let mut s = format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e}",
                    r.eps,
                    r.report.sup_e,
                    r.report.sup_ess(),
                    r.report.sup_res()
                );
                for v in r.final_dev.as_array().iter().chain(&r.sup_dev.as_array()) {
                    let _ = write!(s, ",{v:.12e}");
                }
                let status = if r.failure.is_some() { "failed" } else { "ok" };
                let _ = write!(s, ",{:.12e},{:.12e},{status}", r.b_bound, r.u_bound);
                s
            })
            .collect()
    }

    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.failure.is_some())
    }

    /// `sup_t E_ε` strictly decreasing along the sweep.
    pub fn energy_decreasing(&self) -> bool {
        self.runs.windows(2).all(|w| w[1].report.sup_e < w[0].report.sup_e)
    }

    /// Every sup-in-time deviation strictly decreasing along the sweep.
    pub fn deviations_decreasing(&self) -> bool {
        self.runs.windows(2).all(|w| {
            let (a, b) = (w[0].sup_dev.as_array(), w[1].sup_dev.as_array());
            (0..4).all(|k| b[k] < a[k] || (a[k] == 0.0 && b[k] == 0.0))
        })
    }

    pub fn monitors_bounded(&self) -> bool {
        self.runs.iter().all(|r| r.monitors_bounded(self.monitor_ceiling))
    }

    /// Plain-text table for humans.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8} {:>12} {:>12} {:>12} {:>11} {:>11} {:>11} {:>11}  status",
            "eps", "sup E", "sup E_ess", "sup E_res", "dev rho", "dev theta", "dev B", "dev mom"
        );
        for r in &self.runs {
            let d = r.sup_dev;
            let status = match &r.failure {
                Some(e) => format!("failed: {e}"),
                None => "ok".into(),
            };
            let _ = writeln!(
                out,
                "{:>8.4} {:>12.4e} {:>12.4e} {:>12.4e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}  {status}",
                r.eps,
                r.report.sup_e,
                r.report.sup_ess(),
                r.report.sup_res(),
                d.rho,
                d.theta,
                d.b,
                d.momentum
            );
        }
        match self.rate {
            Some(p) => {
                let _ = writeln!(out, "observed rate: sup E ~ eps^{p:.3}");
            }
            None => {
                let _ = writeln!(out, "observed rate: n/a");
            }
        }
        out
    }
}

fn l2(grid: &Grid, w: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    (0..grid.len()).map(|i| w[i] * f(i)).sum::<f64>().sqrt()
}

fn deviations(obm: &ObmSolver, s: &PrimitiveState, o: &ObmState, w: &[f64]) -> Result<Deviations> {
    let cfg = obm.config();
    let (grid, rf, eps) = (cfg.grid, &cfg.reference, s.eps);
    let rho1 = obm.boussinesq_rho(&o.theta1, &o.b1)?;
    let b1 = o.b1.broadcast(&grid)?;
    let u = o.u.broadcast(&grid)?;
    let sq = |v: f64| v * v;
    let (rho, th) = (s.rho.data(), s.theta.data());
    Ok(Deviations {
        rho: l2(&grid, w, |i| sq((rho[i] - rf.rho_bar) / eps - rho1.data()[i])),
        theta: l2(&grid, w, |i| sq((th[i] - rf.theta_bar) / eps - o.theta1.data()[i])),
        b: l2(&grid, w, |i| {
            sq(s.b.comp(0)[i] / eps) + sq(s.b.comp(1)[i] / eps) + sq((s.b.comp(2)[i] - rf.b_bar) / eps - b1.data()[i])
        }),
        momentum: l2(&grid, w, |i| {
            let (a, b) = (rho[i].sqrt(), rf.rho_bar.sqrt());
            (0..3).map(|c| sq(a * s.u.comp(c)[i] - b * u.comp(c)[i])).sum()
        }),
    })
}

/// `‖u‖²_{W^{1,2}}` at one instant.
fn h1_norm_sq(s: &PrimitiveState, w: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for c in 0..3 {
        let uc = s.u.component(c);
        let g = fields::grad(&uc)?;
        for i in 0..w.len() {
            let grad2: f64 = (0..3).map(|k| g.comp(k)[i].powi(2)).sum();
            total += w[i] * (uc.data()[i].powi(2) + grad2);
        }
    }
    Ok(total)
}

struct Sampler<'a> {
    gas: &'a Gas,
    rf: &'a ReferenceState,
    mhd: &'a MhdSolver,
    obm: &'a ObmSolver,
    w: Vec<f64>,
    eps: f64,
    mass0: f64,
    mean_b1_0: f64,
    run: EpsRun,
    h1: Vec<f64>,
}

impl Sampler<'_> {
    fn sample(&mut self, s: &PrimitiveState, o: &ObmState) -> Result<()> {
        let test = test_quadruple(self.obm, o, self.eps)?;
        let split = ess_res_split(self.gas, self.rf, s, &test)?;
        let diss = dissipation_integral(self.mhd, s, &test)?;
        self.run.report.push(s.t, &split, diss);
        let dev = deviations(self.obm, s, o, &self.w)?;
        self.run.sup_dev = self.run.sup_dev.max(dev);
        self.run.final_dev = dev;
        let bb: f64 = (0..self.w.len())
            .map(|i| {
                let d = [s.b.comp(0)[i], s.b.comp(1)[i], s.b.comp(2)[i] - self.rf.b_bar];
                self.w[i] * norm2(d)
            })
            .sum();
        self.run.b_bound = self.run.b_bound.max(bb / (self.eps * self.eps));
        self.h1.push(h1_norm_sq(s, &self.w)?);
        let mass: f64 = (0..self.w.len()).map(|i| self.w[i] * s.rho.data()[i]).sum();
        self.run.mass_drift = self.run.mass_drift.max((mass - self.mass0).abs() / self.mass0);
        self.run.max_div_b = self.run.max_div_b.max(self.mhd.max_div_b(s));
        let terms = self.mhd.entropy_production_terms(s)?;
        let min_term = terms.iter().map(|t| t.min()).fold(f64::INFINITY, f64::min);
        self.run.min_production_term = self.run.min_production_term.min(min_term);
        self.run.mean_b1_drift = self.run.mean_b1_drift.max((fields::mean(&o.b1) - self.mean_b1_0).abs());
        self.run.max_div_u = self.run.max_div_u.max(self.obm.max_div_u(o));
        Ok(())
    }
}

fn run_eps(cfg: &StudyConfig, eps: f64) -> Result<EpsRun> {
    let grid = cfg.grid;
    let g = if cfg.gravity { default_potential(&grid) } else { ScalarField::zeros(grid) };
    let mut ocfg = ObmConfig::new(cfg.gas.clone(), cfg.reference, grid, 1.0, cfg.t_end);
    ocfg.g = g.clone();
    ocfg.model = cfg.model;
    let (prim, ostate) = well_prepared_data(&cfg.profiles, eps, &ObmSolver::new(ocfg.clone())?)?;

    let mut mcfg = MhdConfig::new(cfg.gas.clone(), cfg.reference, grid, eps, cfg.t_end);
    mcfg.g = g;
    mcfg.cfl = cfg.cfl;
    mcfg.theta_b = ocfg.theta_b.clone();
    let mhd = MhdSolver::new(mcfg)?;
    let (dt0, _) = mhd.run_dt(&prim);
    let samples = (cfg.t_end / (dt0 * cfg.cadence as f64)).ceil().max(1.0) as usize;
    let steps = samples * cfg.cadence;
    let dt = cfg.t_end / steps as f64;
    let sample_dt = dt * cfg.cadence as f64;
    let sub = (sample_dt / (cfg.obm_dt_factor * grid.h3())).ceil().max(1.0) as usize;
    ocfg.dt = sample_dt / sub as f64;
    let obm = ObmSolver::new(ocfg)?;

    let w = weights(&grid);
    let mass0: f64 = (0..w.len()).map(|i| w[i] * prim.rho.data()[i]).sum();
    let mut sampler = Sampler {
        gas: &cfg.gas,
        rf: &cfg.reference,
        mhd: &mhd,
        obm: &obm,
        eps,
        mass0,
        mean_b1_0: fields::mean(&ostate.b1),
        w,
        run: EpsRun {
            eps,
            report: RelEnergyReport::default(),
            sup_dev: Deviations::default(),
            final_dev: Deviations::default(),
            b_bound: 0.0,
            u_bound: 0.0,
            steps: 0,
            mhd_dt: dt,
            obm_dt: obm.config().dt,
            mass_drift: 0.0,
            max_div_b: 0.0,
            min_production_term: f64::INFINITY,
            mean_b1_drift: 0.0,
            max_div_u: 0.0,
            failure: None,
        },
        h1: Vec::new(),
    };
    sampler.sample(&prim, &ostate)?;
    let (mut s, mut o) = (prim, ostate);
    'outer: for _ in 0..samples {
        for _ in 0..cfg.cadence {
            match mhd.step(&s, dt) {
                Ok(next) => {
                    s = next;
                    sampler.run.steps += 1;
                }
                Err(e) => {
                    sampler.run.failure = Some(e);
                    break 'outer;
                }
            }
        }
        for _ in 0..sub {
            match obm.step(&o) {
                Ok(next) => o = next,
                Err(e) => {
                    sampler.run.failure = Some(e);
                    break 'outer;
                }
            }
        }
        // Both clocks advance by sample_dt; pin the limit clock to the
        // primitive one to avoid drift from repeated summation.
        o.t = s.t;
        if let Err(e) = sampler.sample(&s, &o) {
            sampler.run.failure = Some(e);
            break;
        }
    }
    let h1 = &sampler.h1;
    let integral: f64 = h1.windows(2).map(|p| 0.5 * (p[0] + p[1]) * sample_dt).sum();
    sampler.run.u_bound = integral.sqrt();
    Ok(sampler.run)
}

/// Runs the ε-sweep. Setup errors (bad configuration or data) are returned
/// as `Err`; solver failures are tagged on the affected run.
pub fn convergence_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let runs: Vec<Result<EpsRun>> = if cfg.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cfg.eps_list.iter().map(|&eps| scope.spawn(move || run_eps(cfg, eps))).collect();
            handles.into_iter().map(|h| h.join().expect("study worker panicked")).collect()
        })
    } else {
        cfg.eps_list.iter().map(|&eps| run_eps(cfg, eps)).collect()
    };
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = runs
        .iter()
        .filter(|r| r.report.sup_e > 0.0 && r.failure.is_none())
        .map(|r| (r.eps.ln(), r.report.sup_e.ln()))
        .collect();
    let rate = (pts.len() >= 2).then(|| {
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(StudyReport { runs, rate, monitor_ceiling: cfg.monitor_ceiling })
}
