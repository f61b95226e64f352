//! Equation of state, entropy and transport coefficients.
//!
//! The molecular part of the gas is described by a structural function
//! `P(Z)` of `Z = ρ/θ^{3/2}`:
//!
//! ```text
//! p(ρ,θ)  = θ^{5/2} P(Z) + (a/3) θ⁴
//! ρe(ρ,θ) = (3/2) θ^{5/2} P(Z) + a θ⁴
//! s(ρ,θ)  = S(Z) + (4a/3) θ³/ρ,    S'(Z) = -(3/2) (5/3 P(Z) - P'(Z) Z) / Z²
//! ```
//!
//! The default `P(Z) = Z + p∞ Z^{5/3}` gives `S(Z) = -ln Z + s₀` and the closed
//! forms `p = ρθ + p∞ρ^{5/3} + (a/3)θ⁴`, `e = (3/2)θ + (3/2)p∞ρ^{2/3} + aθ⁴/ρ`.

use std::fmt;
use std::sync::Arc;

use crate::{Error, Result};

/// The structural function `P` together with the entropy profile it induces.
pub trait Structural: Send + Sync + fmt::Debug {
    fn p(&self, z: f64) -> f64;
    fn dp(&self, z: f64) -> f64;
    /// Molecular entropy `S(Z)` (including the integration constant).
    fn s(&self, z: f64) -> f64;
    fn ds(&self, z: f64) -> f64;
}

/// `P(Z) = Z + p∞ Z^{5/3}`, `S(Z) = -ln Z + s₀`.
#[derive(Debug, Clone, Copy)]
pub struct DefaultStructural {
    pub p_inf: f64,
    pub s0: f64,
}

impl Structural for DefaultStructural {
    fn p(&self, z: f64) -> f64 {
        z + self.p_inf * z.powf(5.0 / 3.0)
    }
    fn dp(&self, z: f64) -> f64 {
        1.0 + 5.0 / 3.0 * self.p_inf * z.powf(2.0 / 3.0)
    }
    fn s(&self, z: f64) -> f64 {
        -z.ln() + self.s0
    }
    fn ds(&self, z: f64) -> f64 {
        -1.0 / z
    }
}

/// Fault-injection wrapper: scales `S'(Z)` by `1 + defect` while leaving `P`
/// (and hence `p`, `e`) untouched. Any nonzero defect breaks Gibbs' relation.
#[derive(Debug, Clone, Copy)]
pub struct TamperedEntropy {
    pub inner: DefaultStructural,
    pub defect: f64,
}

impl Structural for TamperedEntropy {
    fn p(&self, z: f64) -> f64 {
        self.inner.p(z)
    }
    fn dp(&self, z: f64) -> f64 {
        self.inner.dp(z)
    }
    fn s(&self, z: f64) -> f64 {
        -(1.0 + self.defect) * z.ln() + self.inner.s0
    }
    fn ds(&self, z: f64) -> f64 {
        -(1.0 + self.defect) / z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasParams {
    pub p_inf: f64,
    pub a: f64,
    pub s0: f64,
    pub mu_low: f64,
    pub mu_high: f64,
    pub eta_high: f64,
    pub kappa_low: f64,
    pub kappa_high: f64,
    pub beta: f64,
    pub zeta_low: f64,
    pub zeta_high: f64,
}

impl Default for GasParams {
    fn default() -> Self {
        GasParams {
            p_inf: 1.0,
            a: 0.0,
            s0: 0.0,
            mu_low: 0.05,
            mu_high: 0.05,
            eta_high: 0.0,
            kappa_low: 0.05,
            kappa_high: 0.05,
            beta: 3.0,
            zeta_low: 0.05,
            zeta_high: 0.05,
        }
    }
}

impl GasParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let all = [
            self.p_inf, self.a, self.s0, self.mu_low, self.mu_high, self.eta_high,
            self.kappa_low, self.kappa_high, self.beta, self.zeta_low, self.zeta_high,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("gas parameters must be finite");
        }
        if self.p_inf <= 0.0 {
            return bad("p_inf must be > 0");
        }
        if self.a < 0.0 {
            return bad("a must be >= 0");
        }
        if self.mu_low <= 0.0 || self.mu_low > self.mu_high {
            return bad("need 0 < mu_low <= mu_high");
        }
        if self.eta_high < 0.0 {
            return bad("eta_high must be >= 0");
        }
        if self.kappa_low <= 0.0 || self.kappa_low > self.kappa_high {
            return bad("need 0 < kappa_low <= kappa_high");
        }
        if self.beta <= 0.0 {
            return bad("beta must be > 0");
        }
        if self.zeta_low <= 0.0 || self.zeta_low > self.zeta_high {
            return bad("need 0 < zeta_low <= zeta_high");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceState {
    pub rho_bar: f64,
    pub theta_bar: f64,
    /// Vertical component of the constant background field `(0, 0, b̄)`.
    pub b_bar: f64,
}

impl Default for ReferenceState {
    fn default() -> Self {
        ReferenceState { rho_bar: 1.0, theta_bar: 1.0, b_bar: 1.0 }
    }
}

impl ReferenceState {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_bar > 0.0 && self.rho_bar.is_finite())
            || !(self.theta_bar > 0.0 && self.theta_bar.is_finite())
            || !self.b_bar.is_finite()
        {
            return Err(Error::Config("reference state needs rho_bar, theta_bar > 0".into()));
        }
        Ok(())
    }

    pub fn point(&self) -> ThermoPoint {
        ThermoPoint { rho: self.rho_bar, theta: self.theta_bar }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoPoint {
    pub rho: f64,
    pub theta: f64,
}

impl ThermoPoint {
    pub fn new(rho: f64, theta: f64) -> Self {
        ThermoPoint { rho, theta }
    }
}

/// Constitutive law: parameters plus the structural function.
#[derive(Debug, Clone)]
pub struct Gas {
    pub params: GasParams,
    law: Arc<dyn Structural>,
}

fn domain(msg: String) -> Error {
    Error::Domain(msg)
}

impl Gas {
    pub fn new(params: GasParams) -> Result<Self> {
        params.validate()?;
        let law = Arc::new(DefaultStructural { p_inf: params.p_inf, s0: params.s0 });
        Ok(Gas { params, law })
    }

    pub fn with_structural(params: GasParams, law: Arc<dyn Structural>) -> Result<Self> {
        params.validate()?;
        Ok(Gas { params, law })
    }

    pub fn structural(&self) -> &dyn Structural {
        &*self.law
    }

    /// The structural function `P(Z)`.
    pub fn structural_p(&self, z: f64) -> Result<f64> {
        if !(z >= 0.0) {
            return Err(domain(format!("structural function needs Z >= 0, got {z}")));
        }
        Ok(self.law.p(z))
    }

    fn check_theta(theta: f64) -> Result<()> {
        if theta > 0.0 && theta.is_finite() {
            Ok(())
        } else {
            Err(domain(format!("temperature must be > 0, got {theta}")))
        }
    }

    fn check_point(pt: ThermoPoint, allow_vacuum: bool) -> Result<()> {
        Self::check_theta(pt.theta)?;
        let ok = if allow_vacuum { pt.rho >= 0.0 } else { pt.rho > 0.0 };
        if ok && pt.rho.is_finite() {
            Ok(())
        } else {
            Err(domain(format!("density out of range: {}", pt.rho)))
        }
    }

    // ---- unchecked kernels (callers guarantee ρ ≥ 0 / > 0, θ > 0) ----

    /// `(3/2) θ^{5/2} P(Z)`: the molecular energy density shared by p and ρe.
    #[inline]
    pub(crate) fn rho_e_m_raw(&self, rho: f64, theta: f64) -> f64 {
        let z = rho / theta.powf(1.5);
        1.5 * theta.powf(2.5) * self.law.p(z)
    }

    #[inline]
    pub(crate) fn p_raw(&self, rho: f64, theta: f64) -> f64 {
        2.0 / 3.0 * self.rho_e_m_raw(rho, theta) + self.params.a / 3.0 * theta.powi(4)
    }

    #[inline]
    pub(crate) fn rho_e_raw(&self, rho: f64, theta: f64) -> f64 {
        self.rho_e_m_raw(rho, theta) + self.params.a * theta.powi(4)
    }

    #[inline]
    pub(crate) fn e_raw(&self, rho: f64, theta: f64) -> f64 {
        self.rho_e_raw(rho, theta) / rho
    }

    #[inline]
    pub(crate) fn s_raw(&self, rho: f64, theta: f64) -> f64 {
        let z = rho / theta.powf(1.5);
        self.law.s(z) + 4.0 * self.params.a / 3.0 * theta.powi(3) / rho
    }

    /// Total entropy `ρs`, continuous up to vacuum.
    #[inline]
    pub(crate) fn rho_s_raw(&self, rho: f64, theta: f64) -> f64 {
        let rad = 4.0 * self.params.a / 3.0 * theta.powi(3);
        if rho == 0.0 {
            rad
        } else {
            rho * self.law.s(rho / theta.powf(1.5)) + rad
        }
    }

    #[inline]
    pub(crate) fn dp_drho_raw(&self, rho: f64, theta: f64) -> f64 {
        theta * self.law.dp(rho / theta.powf(1.5))
    }

    #[inline]
    pub(crate) fn dp_dtheta_raw(&self, rho: f64, theta: f64) -> f64 {
        let z = rho / theta.powf(1.5);
        theta.powf(1.5) * (2.5 * self.law.p(z) - 1.5 * z * self.law.dp(z))
            + 4.0 * self.params.a / 3.0 * theta.powi(3)
    }

    #[inline]
    pub(crate) fn de_dtheta_raw(&self, rho: f64, theta: f64) -> f64 {
        let z = rho / theta.powf(1.5);
        (1.5 * theta.powf(1.5) * (2.5 * self.law.p(z) - 1.5 * z * self.law.dp(z))
            + 4.0 * self.params.a * theta.powi(3))
            / rho
    }

    #[inline]
    pub(crate) fn de_drho_raw(&self, rho: f64, theta: f64) -> f64 {
        let z = rho / theta.powf(1.5);
        (1.5 * theta * self.law.dp(z) - self.e_raw(rho, theta)) / rho
    }

    #[inline]
    pub(crate) fn ds_drho_raw(&self, rho: f64, theta: f64) -> f64 {
        let z = rho / theta.powf(1.5);
        self.law.ds(z) * z / rho - 4.0 * self.params.a / 3.0 * theta.powi(3) / (rho * rho)
    }

    #[inline]
    pub(crate) fn ds_dtheta_raw(&self, rho: f64, theta: f64) -> f64 {
        let z = rho / theta.powf(1.5);
        -1.5 * self.law.ds(z) * z / theta + 4.0 * self.params.a * theta * theta / rho
    }

    /// Adiabatic sound speed squared `∂ρp + θ(∂θp)²/(ρ²∂θe)`.
    #[inline]
    pub(crate) fn sound_speed_sq_raw(&self, rho: f64, theta: f64) -> f64 {
        let pt = self.dp_dtheta_raw(rho, theta);
        self.dp_drho_raw(rho, theta) + theta * pt * pt / (rho * rho * self.de_dtheta_raw(rho, theta))
    }

    // ---- checked public API ----

    pub fn pressure(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, true)?;
        Ok(self.p_raw(pt.rho, pt.theta))
    }

    /// Molecular pressure `p_M = θ^{5/2}P(Z)`, computed as `(2/3)·ρe_M`.
    pub fn pressure_molecular(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, true)?;
        Ok(2.0 / 3.0 * self.rho_e_m_raw(pt.rho, pt.theta))
    }

    /// Molecular energy density `ρe_M` (defined at vacuum).
    pub fn energy_density_molecular(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, true)?;
        Ok(self.rho_e_m_raw(pt.rho, pt.theta))
    }

    pub fn internal_energy(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, false)?;
        Ok(self.e_raw(pt.rho, pt.theta))
    }

    /// Total energy density `ρe`, admissible at `ρ = 0`.
    pub fn energy_density(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, true)?;
        Ok(self.rho_e_raw(pt.rho, pt.theta))
    }

    pub fn entropy(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, false)?;
        Ok(self.s_raw(pt.rho, pt.theta))
    }

    /// Total entropy `ρs`, admissible at `ρ = 0`.
    pub fn entropy_density(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, true)?;
        Ok(self.rho_s_raw(pt.rho, pt.theta))
    }

    pub fn dp_drho(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, false)?;
        Ok(self.dp_drho_raw(pt.rho, pt.theta))
    }

    pub fn dp_dtheta(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, false)?;
        Ok(self.dp_dtheta_raw(pt.rho, pt.theta))
    }

    pub fn de_dtheta(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, false)?;
        Ok(self.de_dtheta_raw(pt.rho, pt.theta))
    }

    pub fn de_drho(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, false)?;
        Ok(self.de_drho_raw(pt.rho, pt.theta))
    }

    pub fn ds_drho(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, false)?;
        Ok(self.ds_drho_raw(pt.rho, pt.theta))
    }

    pub fn ds_dtheta(&self, pt: ThermoPoint) -> Result<f64> {
        Self::check_point(pt, false)?;
        Ok(self.ds_dtheta_raw(pt.rho, pt.theta))
    }

    /// `(|θ∂θs − ∂θe|, |θ∂ρs − (∂ρe − p/ρ²)|)`.
    pub fn gibbs_residual(&self, pt: ThermoPoint) -> Result<(f64, f64)> {
        Self::check_point(pt, false)?;
        let (r, t) = (pt.rho, pt.theta);
        let r1 = (t * self.ds_dtheta_raw(r, t) - self.de_dtheta_raw(r, t)).abs();
        let r2 = (t * self.ds_drho_raw(r, t) - (self.de_drho_raw(r, t) - self.p_raw(r, t) / (r * r))).abs();
        Ok((r1, r2))
    }

    /// Thermal expansion coefficient and specific heat at constant pressure.
    pub fn alpha_cp(&self, rf: &ReferenceState) -> Result<(f64, f64)> {
        rf.validate()?;
        let (r, t) = (rf.rho_bar, rf.theta_bar);
        let pr = self.dp_drho_raw(r, t);
        let pt = self.dp_dtheta_raw(r, t);
        let alpha = pt / (r * pr);
        let cp = self.de_dtheta_raw(r, t) + t * alpha / r * pt;
        Ok((alpha, cp))
    }

    // ---- transport ----

    fn check_transport(theta: f64) -> Result<()> {
        if theta >= 0.0 && theta.is_finite() {
            Ok(())
        } else {
            Err(domain(format!("transport coefficient needs θ >= 0, got {theta}")))
        }
    }

    #[inline]
    pub(crate) fn mu_raw(&self, theta: f64) -> f64 {
        self.params.mu_low * (1.0 + theta)
    }
    #[inline]
    pub(crate) fn eta_raw(&self, _theta: f64) -> f64 {
        0.0
    }
    #[inline]
    pub(crate) fn kappa_raw(&self, theta: f64) -> f64 {
        self.params.kappa_low * (1.0 + theta.powf(self.params.beta))
    }
    #[inline]
    pub(crate) fn zeta_raw(&self, theta: f64) -> f64 {
        self.params.zeta_low * (1.0 + theta)
    }

    pub fn mu(&self, theta: f64) -> Result<f64> {
        Self::check_transport(theta)?;
        Ok(self.mu_raw(theta))
    }
    pub fn eta(&self, theta: f64) -> Result<f64> {
        Self::check_transport(theta)?;
        Ok(self.eta_raw(theta))
    }
    pub fn kappa(&self, theta: f64) -> Result<f64> {
        Self::check_transport(theta)?;
        Ok(self.kappa_raw(theta))
    }
    pub fn zeta(&self, theta: f64) -> Result<f64> {
        Self::check_transport(theta)?;
        Ok(self.zeta_raw(theta))
    }

    /// θ-derivatives of (μ, η, κ, ζ); used by manufactured solutions.
    pub fn transport_derivatives(&self, theta: f64) -> Result<[f64; 4]> {
        if !(theta > 0.0) {
            return Err(domain(format!("transport derivative needs θ > 0, got {theta}")));
        }
        let p = &self.params;
        Ok([
            p.mu_low,
            0.0,
            p.kappa_low * p.beta * theta.powf(p.beta - 1.0),
            p.zeta_low,
        ])
    }
}

/// Coefficients of the limit system, all evaluated at the reference state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceCoefficients {
    pub rho_bar: f64,
    pub theta_bar: f64,
    pub b_bar: f64,
    pub dp_drho: f64,
    pub dp_dtheta: f64,
    pub de_dtheta: f64,
    pub ds_drho: f64,
    pub ds_dtheta: f64,
    pub alpha: f64,
    pub cp: f64,
    pub mu: f64,
    pub kappa: f64,
    pub zeta: f64,
}

impl ReferenceCoefficients {
    pub fn new(gas: &Gas, rf: &ReferenceState) -> Result<Self> {
        let (alpha, cp) = gas.alpha_cp(rf)?;
        let pt = rf.point();
        Ok(ReferenceCoefficients {
            rho_bar: rf.rho_bar,
            theta_bar: rf.theta_bar,
            b_bar: rf.b_bar,
            dp_drho: gas.dp_drho(pt)?,
            dp_dtheta: gas.dp_dtheta(pt)?,
            de_dtheta: gas.de_dtheta(pt)?,
            ds_drho: gas.ds_drho(pt)?,
            ds_dtheta: gas.ds_dtheta(pt)?,
            alpha,
            cp,
            mu: gas.mu(rf.theta_bar)?,
            kappa: gas.kappa(rf.theta_bar)?,
            zeta: gas.zeta(rf.theta_bar)?,
        })
    }

    /// The two summands of the mean-temperature coefficient cancellation:
    /// `-α∂θe/c_p` and `-(ϱ̄∂ρs/∂θp)(1 - ϑ̄α∂θp/(ϱ̄c_p))(∂θp/∂ρp)`.
    pub fn cancellation_terms(&self) -> (f64, f64) {
        let c = self;
        let t1 = -c.alpha * c.de_dtheta / c.cp;
        let t2 = -(c.rho_bar * c.ds_drho / c.dp_dtheta)
            * (1.0 - c.theta_bar * c.alpha * c.dp_dtheta / (c.rho_bar * c.cp))
            * (c.dp_dtheta / c.dp_drho);
        (t1, t2)
    }

    /// `(κ/c_p)(∂ρs ∂θp/∂ρp − ∂θs)`, which equals `−κ/ϑ̄` for a consistent EOS.
    pub fn conduction_coefficient(&self) -> f64 {
        let c = self;
        c.kappa / c.cp * (c.ds_drho * c.dp_dtheta / c.dp_drho - c.ds_dtheta)
    }

    /// `ϱ̄c_p − ϑ̄α∂θp`, which equals `ϱ̄∂θe`.
    pub fn mean_heat_capacity(&self) -> f64 {
        self.rho_bar * self.cp - self.theta_bar * self.alpha * self.dp_dtheta
    }
}

/// One line of the consistency suite: the worst defect found and the bound it
/// must stay under.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyCheck {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl ConsistencyCheck {
    pub fn passed(&self) -> bool {
        self.value.is_finite() && self.value < self.tolerance
    }
}

/// Gibbs' relation (closed form and by central differences), thermodynamic
/// stability, and the structural identities of the limit coefficients.
///
/// Gibbs residuals are sampled at `samples` seeded points of `[0.5, 2]²`;
/// stability on a logarithmic 41×41 lattice of `[0.01, 100]²`.
pub fn consistency_suite(gas: &Gas, rf: &ReferenceState, samples: usize, seed: u64) -> Result<Vec<ConsistencyCheck>> {
    use rand::{Rng, SeedableRng};
    rf.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let (mut closed, mut fd) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let (r, t) = (rng.gen_range(0.5..=2.0), rng.gen_range(0.5..=2.0));
        let (a, b) = gas.gibbs_residual(ThermoPoint::new(r, t))?;
        closed = closed.max(a).max(b);
        let ds_dt = (gas.s_raw(r, t + h) - gas.s_raw(r, t - h)) / (2.0 * h);
        let de_dt = (gas.e_raw(r, t + h) - gas.e_raw(r, t - h)) / (2.0 * h);
        let ds_dr = (gas.s_raw(r + h, t) - gas.s_raw(r - h, t)) / (2.0 * h);
        let de_dr = (gas.e_raw(r + h, t) - gas.e_raw(r - h, t)) / (2.0 * h);
        fd = fd.max((t * ds_dt - de_dt).abs()).max((t * ds_dr - (de_dr - gas.p_raw(r, t) / (r * r))).abs());
    }

    // positive margin ⇒ reported defect is 0
    let mut unstable = 0.0f64;
    let lattice = |k: usize| 10f64.powf(-2.0 + 4.0 * k as f64 / 40.0);
    for i in 0..=40 {
        for j in 0..=40 {
            let (r, t) = (lattice(i), lattice(j));
            let m = gas.dp_drho_raw(r, t).min(gas.de_dtheta_raw(r, t));
            if !(m > 0.0) {
                unstable = unstable.max(1.0 - m.min(0.0));
            }
        }
    }

    let c = ReferenceCoefficients::new(gas, rf)?;
    let (t1, t2) = c.cancellation_terms();
    let pt = rf.point();
    let pm = gas.pressure_molecular(pt)?;
    let em = gas.energy_density_molecular(pt)?;
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
    Ok(vec![
        ConsistencyCheck { name: "gibbs_closed_form", value: closed, tolerance: 1e-12 },
        ConsistencyCheck { name: "gibbs_finite_difference", value: fd, tolerance: 1e-7 },
        ConsistencyCheck { name: "stability", value: unstable, tolerance: f64::MIN_POSITIVE },
        ConsistencyCheck { name: "mean_coefficient_cancellation", value: (t1 + t2).abs(), tolerance: 1e-12 },
        ConsistencyCheck {
            name: "conduction_identity",
            value: rel(c.conduction_coefficient(), -c.kappa / c.theta_bar),
            tolerance: 1e-12,
        },
        ConsistencyCheck {
            name: "heat_capacity_identity",
            value: rel(c.mean_heat_capacity(), c.rho_bar * c.de_dtheta),
            tolerance: 1e-12,
        },
        ConsistencyCheck { name: "molecular_pressure", value: rel(pm, 2.0 / 3.0 * em), tolerance: 1e-12 },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_gas(a: f64) -> Gas {
        Gas::new(GasParams { a, ..GasParams::default() }).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn structural_values() {
        let g = unit_gas(0.0);
        assert_eq!(g.structural_p(0.0).unwrap(), 0.0);
        assert!(close(g.structural_p(1.0).unwrap(), 2.0, 1e-15));
        assert!(g.structural_p(-1.0).is_err());
        for p_inf in [0.3, 1.0, 7.0] {
            let law = DefaultStructural { p_inf, s0: 0.0 };
            for z in [0.1, 1.0, 10.0] {
                let q = (5.0 / 3.0 * law.p(z) - law.dp(z) * z) / z;
                assert!(close(q, 2.0 / 3.0, 1e-13), "{q}");
                assert!(law.ds(z) < 0.0);
            }
        }
    }

    #[test]
    fn pressure_examples() {
        let g = Gas::new(GasParams { a: 3.0, ..GasParams::default() }).unwrap();
        assert!(close(g.pressure(ThermoPoint::new(0.0, 2.0)).unwrap(), 16.0, 1e-14));
        assert!(close(g.pressure(ThermoPoint::new(1.0, 1.0)).unwrap(), 3.0, 1e-14));
        assert!(close(unit_gas(0.0).pressure(ThermoPoint::new(8.0, 4.0)).unwrap(), 64.0, 1e-14));
        assert!(g.pressure(ThermoPoint::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn energy_examples() {
        assert!(close(unit_gas(0.0).internal_energy(ThermoPoint::new(1.0, 1.0)).unwrap(), 3.0, 1e-14));
        // GasParams insists on p∞ > 0, so the monatomic-plus-radiation case goes
        // through the structural interface with a purely linear P.
        let params = GasParams { a: 3.0, ..GasParams::default() };
        let linear = Arc::new(DefaultStructural { p_inf: 0.0, s0: 0.0 });
        let g = Gas::with_structural(params, linear).unwrap();
        assert!(close(g.internal_energy(ThermoPoint::new(1.0, 1.0)).unwrap(), 4.5, 1e-14));
        let g = unit_gas(3.0);
        assert!(g.internal_energy(ThermoPoint::new(0.0, 1.0)).is_err());
        assert!(close(g.energy_density(ThermoPoint::new(0.0, 1.0)).unwrap(), 3.0, 1e-14));
    }

    #[test]
    fn entropy_examples() {
        let g = unit_gas(0.0);
        assert!(g.entropy(ThermoPoint::new(1.0, 1.0)).unwrap().abs() < 1e-15);
        let s1 = g.entropy(ThermoPoint::new(0.7, 1.3)).unwrap();
        let s2 = g.entropy(ThermoPoint::new(8.0 * 0.7, 4.0 * 1.3)).unwrap();
        assert!(close(s1, s2, 1e-13));
        assert!(g.entropy(ThermoPoint::new(0.0, 1.0)).is_err());
        assert_eq!(g.entropy_density(ThermoPoint::new(0.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn derivative_oracle_at_unit_state() {
        let g = unit_gas(0.0);
        let pt = ThermoPoint::new(1.0, 1.0);
        assert!(close(g.dp_drho(pt).unwrap(), 8.0 / 3.0, 1e-14));
        assert!(close(g.dp_dtheta(pt).unwrap(), 1.0, 1e-14));
        assert!(close(g.de_dtheta(pt).unwrap(), 1.5, 1e-14));
        assert!(close(g.ds_drho(pt).unwrap(), -1.0, 1e-14));
        assert!(close(g.ds_dtheta(pt).unwrap(), 1.5, 1e-14));
        let (r1, r2) = g.gibbs_residual(pt).unwrap();
        assert!(r1 < 1e-12 && r2 < 1e-12);
    }

    #[test]
    fn closed_forms_match_explicit_formulas() {
        let g = unit_gas(0.4);
        let (p_inf, a) = (1.0, 0.4);
        for &(r, t) in &[(0.5, 0.5), (1.3, 0.7), (2.0, 1.9)] {
            let pt = ThermoPoint::new(r, t);
            let rr: f64 = r;
            assert!(close(g.dp_drho(pt).unwrap(), t + 5.0 / 3.0 * p_inf * rr.powf(2.0 / 3.0), 1e-13));
            assert!(close(g.dp_dtheta(pt).unwrap(), r + 4.0 * a / 3.0 * t.powi(3), 1e-13));
            assert!(close(g.de_dtheta(pt).unwrap(), 1.5 + 4.0 * a * t.powi(3) / r, 1e-13));
            assert!(close(g.de_drho(pt).unwrap(), p_inf * rr.powf(-1.0 / 3.0) - a * t.powi(4) / (r * r), 1e-13));
            assert!(close(g.ds_drho(pt).unwrap(), -1.0 / r - 4.0 * a / 3.0 * t.powi(3) / (r * r), 1e-13));
            assert!(close(g.ds_dtheta(pt).unwrap(), 1.5 / t + 4.0 * a * t * t / r, 1e-13));
        }
    }

    #[test]
    fn alpha_cp_at_unit_state() {
        let g = unit_gas(0.0);
        let rf = ReferenceState { rho_bar: 1.0, theta_bar: 1.0, b_bar: 0.0 };
        let (alpha, cp) = g.alpha_cp(&rf).unwrap();
        assert!(close(alpha, 3.0 / 8.0, 1e-15));
        assert!(close(cp, 15.0 / 8.0, 1e-15));
        let c = ReferenceCoefficients::new(&g, &rf).unwrap();
        assert!(close(c.mean_heat_capacity(), 1.5, 1e-14));
        let (t1, t2) = c.cancellation_terms();
        assert!(close(t1, -0.3, 1e-14) && close(t2, 0.3, 1e-14));
    }

    #[test]
    fn transport_defaults() {
        let g = Gas::new(GasParams { kappa_low: 1.0, kappa_high: 1.0, ..GasParams::default() }).unwrap();
        assert_eq!(g.mu(0.0).unwrap(), g.params.mu_low);
        assert!(close(g.kappa(1.0).unwrap(), 2.0, 1e-15));
        assert_eq!(g.eta(2.0).unwrap(), 0.0);
        assert!(g.zeta(-0.1).is_err());
    }

    #[test]
    fn tampered_entropy_breaks_gibbs() {
        let p = GasParams::default();
        let law = Arc::new(TamperedEntropy { inner: DefaultStructural { p_inf: p.p_inf, s0: 0.0 }, defect: 1e-3 });
        let g = Gas::with_structural(p, law).unwrap();
        let (r1, _) = g.gibbs_residual(ThermoPoint::new(1.0, 1.0)).unwrap();
        assert!(r1 > 1e-6);
    }

    #[test]
    fn suite_passes_for_default_and_flags_tampering() {
        let rf = ReferenceState::default();
        let checks = consistency_suite(&unit_gas(0.5), &rf, 100, 7).unwrap();
        assert!(checks.iter().all(|c| c.passed()), "{checks:?}");
        let p = GasParams::default();
        let law = Arc::new(TamperedEntropy { inner: DefaultStructural { p_inf: p.p_inf, s0: 0.0 }, defect: 1e-3 });
        let g = Gas::with_structural(p, law).unwrap();
        let checks = consistency_suite(&g, &rf, 100, 7).unwrap();
        assert!(!checks[0].passed() && !checks[1].passed());
    }

    #[test]
    fn validation() {
        assert!(Gas::new(GasParams { a: -1.0, ..GasParams::default() }).is_err());
        assert!(Gas::new(GasParams { p_inf: 0.0, ..GasParams::default() }).is_err());
        assert!(Gas::new(GasParams { mu_high: 0.01, ..GasParams::default() }).is_err());
    }
}
