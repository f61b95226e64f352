//! The limiting magneto-Oberbeck–Boussinesq system.
//!
//! Unknowns: the horizontal, depth-independent velocity `U`, the temperature
//! deviation `ϑ¹` on the strip, and the scalar magnetic deviation `b¹` on the
//! cross-section. `ϱ¹`, `A = b̄b¹` and `χ` are derived, never stored as
//! independent unknowns.
//!
//! Time stepping is IMEX: Crank–Nicolson for the diffusion operators (diagonal
//! in Fourier space horizontally, tridiagonal per mode vertically) and a Heun
//! predictor–corrector for everything else.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::fields::{self, spectral, vertical, Grid, ScalarField, VectorField};
use crate::thermo::{Gas, ReferenceCoefficients, ReferenceState};
use crate::{Error, Result};

/// Tolerance on `mean(G)` accepted at configuration time.
const MEAN_G_TOL: f64 = 1e-10;
/// Advective CFL ceiling `|U|·dt/h`.
pub const CFL_LIMIT: f64 = 0.9;

/// Which form of the limit equations for `ϑ¹` and `b¹` is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LimitModel {
    /// The system as usually written: `b¹` diffuses with `ζ(ϑ̄)` and the heat
    /// equation carries `+ϑ̄αζ(ϑ̄)Δ_hA`.
    #[default]
    Literal,
    /// The form obtained by expanding the primitive system consistently. The
    /// `O(ε)` horizontal velocity that keeps the depth-averaged density in
    /// Boussinesq balance compresses the background field `b̄`, so `b¹` picks
    /// up `(b̄/ϱ̄)D_t⟨ϱ¹⟩_z`; the heat equation carries `−ϑ̄α D_tA`.
    Consistent,
}

/// Dirichlet data for `ϑ¹` on the two walls (one value per horizontal node).
#[derive(Debug, Clone, PartialEq)]
pub struct WallProfile {
    pub bottom: Vec<f64>,
    pub top: Vec<f64>,
}

impl WallProfile {
    pub fn uniform(grid: &Grid, bottom: f64, top: f64) -> Self {
        let l = grid.layer_len();
        WallProfile { bottom: vec![bottom; l], top: vec![top; l] }
    }
}

/// Additive right-hand sides, used by manufactured solutions.
#[derive(Debug, Clone, Default)]
pub struct ObmSources {
    /// Added to `∂tϑ¹` (strip field).
    pub theta1: Option<Vec<f64>>,
    /// Added to `∂tb¹` (horizontal field).
    pub b1: Option<Vec<f64>>,
    /// Added to `∂tU` before projection (horizontal fields).
    pub u: Option<[Vec<f64>; 2]>,
}

pub type SourceHook = Arc<dyn Fn(f64, &Grid) -> ObmSources + Send + Sync>;

#[derive(Clone)]
pub struct ObmConfig {
    pub gas: Gas,
    pub reference: ReferenceState,
    /// Strip grid carrying `ϑ¹` (`Strip2` or `Strip3`).
    pub grid: Grid,
    /// Gravitational potential, mean-free.
    pub g: ScalarField,
    pub theta_b: WallProfile,
    pub dt: f64,
    pub t_end: f64,
    /// Keep `U` at its initial value (forced to zero on `Strip2`).
    pub freeze_velocity: bool,
    pub model: LimitModel,
    pub source: Option<SourceHook>,
}

impl fmt::Debug for ObmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObmConfig")
            .field("gas", &self.gas)
            .field("reference", &self.reference)
            .field("grid", &self.grid)
            .field("dt", &self.dt)
            .field("t_end", &self.t_end)
            .field("freeze_velocity", &self.freeze_velocity)
            .field("model", &self.model)
            .field("source", &self.source.is_some())
            .finish_non_exhaustive()
    }
}

impl ObmConfig {
    /// Default setup: `G = ½ − x3`, homogeneous wall data.
    pub fn new(gas: Gas, reference: ReferenceState, grid: Grid, dt: f64, t_end: f64) -> Self {
        ObmConfig {
            gas,
            reference,
            grid,
            g: default_potential(&grid),
            theta_b: WallProfile::uniform(&grid, 0.0, 0.0),
            dt,
            t_end,
            freeze_velocity: false,
            model: LimitModel::Literal,
            source: None,
        }
    }
}

/// The mean-free vertical potential `G(x3) = ½ − x3`.
pub fn default_potential(grid: &Grid) -> ScalarField {
    ScalarField::from_fn(*grid, |_, _, z| 0.5 - z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObmState {
    /// Horizontal velocity on the cross-section; third component zero.
    pub u: VectorField,
    pub theta1: ScalarField,
    pub b1: ScalarField,
    pub chi: f64,
    pub t: f64,
}

/// Fields derived from a state.
#[derive(Debug, Clone, PartialEq)]
pub struct ObmDerived {
    pub rho1: ScalarField,
    pub a: ScalarField,
    pub chi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObmDiagnostics {
    pub t: f64,
    pub mean_theta1: f64,
    pub chi: f64,
    pub kinetic: f64,
    pub magnetic: f64,
    pub continuity_residual: f64,
    pub max_div_u: f64,
    pub mean_b1: f64,
}

impl ObmDiagnostics {
    pub const CSV_HEADER: &'static str = "t,mean_theta1,chi,kinetic_energy,magnetic_energy,continuity_residual";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.t, self.mean_theta1, self.chi, self.kinetic, self.magnetic, self.continuity_residual
        )
    }
}

pub struct ObmSolver {
    cfg: ObmConfig,
    coef: ReferenceCoefficients,
    hgrid: Grid,
    /// Horizontal gradient of `G` on the strip.
    grad_g: (Vec<f64>, Vec<f64>),
    /// Wall data in Fourier space.
    wall_hat: (Vec<Complex64>, Vec<Complex64>),
}

impl ObmSolver {
    pub fn new(cfg: ObmConfig) -> Result<Self> {
        cfg.reference.validate()?;
        let grid = cfg.grid;
        if !grid.geometry.is_strip() {
            return Err(Error::Config("the limit solver runs on a strip grid".into()));
        }
        if *cfg.g.grid() != grid {
            return Err(Error::Config("G must live on the solver grid".into()));
        }
        cfg.g.check_finite("G")?;
        let mg = fields::mean(&cfg.g);
        if mg.abs() > MEAN_G_TOL {
            return Err(Error::Config(format!("G must be mean-free, mean(G) = {mg:e}")));
        }
        let l = grid.layer_len();
        if cfg.theta_b.bottom.len() != l || cfg.theta_b.top.len() != l {
            return Err(Error::Config("wall profile does not match the grid".into()));
        }
        if !(cfg.dt > 0.0 && cfg.dt.is_finite()) || !(cfg.t_end >= 0.0) {
            return Err(Error::Config(format!("invalid dt = {} / t_end = {}", cfg.dt, cfg.t_end)));
        }
        let coef = ReferenceCoefficients::new(&cfg.gas, &cfg.reference)?;
        let hgrid = grid.horizontal();
        let grad_g = fields::grad_h_raw(&grid, cfg.g.data());
        let wall_hat = (
            spectral::forward(&hgrid, &cfg.theta_b.bottom),
            spectral::forward(&hgrid, &cfg.theta_b.top),
        );
        Ok(ObmSolver { cfg, coef, hgrid, grad_g, wall_hat })
    }

    pub fn config(&self) -> &ObmConfig {
        &self.cfg
    }

    pub fn coefficients(&self) -> &ReferenceCoefficients {
        &self.coef
    }

    pub fn horizontal_grid(&self) -> &Grid {
        &self.hgrid
    }

    fn velocity_active(&self) -> bool {
        !self.cfg.freeze_velocity && self.cfg.grid.n2 > 1
    }

    /// Builds a consistent state: projects `U`, imposes wall data, sets `χ`.
    pub fn initial_state(&self, u: VectorField, mut theta1: ScalarField, b1: ScalarField) -> Result<ObmState> {
        if *u.grid() != self.hgrid || *b1.grid() != self.hgrid || *theta1.grid() != self.cfg.grid {
            return Err(Error::Field("initial fields on the wrong grids".into()));
        }
        theta1.check_finite("theta1")?;
        b1.check_finite("b1")?;
        let u = if self.cfg.grid.n2 == 1 {
            VectorField::zeros(self.hgrid)
        } else {
            let mut p = fields::leray_project(&u)?;
            p.comp_mut(2).iter_mut().for_each(|v| *v = 0.0);
            p
        };
        self.impose_walls(theta1.data_mut());
        let chi = self.coef.dp_dtheta * fields::mean(&theta1);
        Ok(ObmState { u, theta1, b1, chi, t: 0.0 })
    }

    pub fn zero_state(&self) -> Result<ObmState> {
        self.initial_state(
            VectorField::zeros(self.hgrid),
            ScalarField::zeros(self.cfg.grid),
            ScalarField::zeros(self.hgrid),
        )
    }

    fn impose_walls(&self, theta: &mut [f64]) {
        let g = &self.cfg.grid;
        let l = g.layer_len();
        let top = l * (g.n3 - 1);
        theta[..l].copy_from_slice(&self.cfg.theta_b.bottom);
        theta[top..top + l].copy_from_slice(&self.cfg.theta_b.top);
    }

    /// `ϱ¹ = [ϱ̄G − ∂θp(ϑ¹ − ⟨ϑ¹⟩) − (A − ⟨A⟩)]/∂ρp` with `A = b̄b¹`.
    pub fn boussinesq_rho(&self, theta1: &ScalarField, b1: &ScalarField) -> Result<ScalarField> {
        let c = &self.coef;
        let grid = self.cfg.grid;
        let mt = fields::mean(theta1);
        let a = self.magnetic_potential(b1);
        let ma = fields::mean(&a);
        let l = grid.layer_len();
        let g = self.cfg.g.data();
        let data = theta1
            .data()
            .iter()
            .enumerate()
            .map(|(i, &th)| {
                let ai = a.data()[i % l] - ma;
                (c.rho_bar * g[i] - c.dp_dtheta * (th - mt) - ai) / c.dp_drho
            })
            .collect();
        ScalarField::new(grid, data)
    }

    /// `A = b̄b¹`.
    pub fn magnetic_potential(&self, b1: &ScalarField) -> ScalarField {
        b1.map(|v| self.coef.b_bar * v)
    }

    pub fn derived(&self, state: &ObmState) -> Result<ObmDerived> {
        Ok(ObmDerived {
            rho1: self.boussinesq_rho(&state.theta1, &state.b1)?,
            a: self.magnetic_potential(&state.b1),
            chi: self.coef.dp_dtheta * fields::mean(&state.theta1),
        })
    }

    /// `−div(b¹U) + ζ(ϑ̄)Δ_h b¹`.
    pub fn induction_rhs(&self, b1: &ScalarField, u: &VectorField) -> Result<ScalarField> {
        b1.check_finite("b1")?;
        let g = self.hgrid;
        let mut f1: Vec<f64> = b1.data().iter().zip(u.comp(0)).map(|(b, v)| b * v).collect();
        let mut f2: Vec<f64> = b1.data().iter().zip(u.comp(1)).map(|(b, v)| b * v).collect();
        fields::dealias_raw(&g, &mut f1);
        fields::dealias_raw(&g, &mut f2);
        let adv = fields::div_h_raw(&g, &f1, &f2);
        let lap = fields::lap_h_raw(&g, b1.data());
        let z = self.coef.zeta;
        ScalarField::new(g, adv.iter().zip(&lap).map(|(a, l)| -a + z * l).collect())
    }

    /// Full rates `(∂tϑ¹, ∂tb¹, d⟨ϑ¹⟩/dt)` including optional sources.
    fn rates(&self, state: &ObmState, src: &ObmSources) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let c = &self.coef;
        let grid = self.cfg.grid;
        let hg = self.hgrid;
        let l = grid.layer_len();
        let rcp = c.rho_bar * c.cp;
        let ta = c.theta_bar * c.alpha;
        let lap = fields::laplacian(&state.theta1)?;
        let flux = fields::mean_laplacian_flux(&state.theta1)?.value;
        let mean_src = match &src.theta1 {
            Some(s) => fields::mean(&ScalarField::from_vec(grid, s.to_vec())),
            None => 0.0,
        };
        let drift = (c.kappa * flux + rcp * mean_src) / (c.rho_bar * c.de_dtheta);

        let (t1, t2) = fields::grad_h_raw(&grid, state.theta1.data());
        let moving = state.u.max_abs() > 0.0;
        let (mut adv_t, mut adv_g) = (vec![0.0; grid.len()], vec![0.0; grid.len()]);
        if moving {
            let (u1, u2) = (state.u.comp(0), state.u.comp(1));
            for i in 0..grid.len() {
                let h = i % l;
                adv_t[i] = u1[h] * t1[i] + u2[h] * t2[i];
                adv_g[i] = u1[h] * self.grad_g.0[i] + u2[h] * self.grad_g.1[i];
            }
            fields::dealias_raw(&grid, &mut adv_t);
            fields::dealias_raw(&grid, &mut adv_g);
        }
        // Material rate of ϑ¹ without the magnetic contribution.
        let base: Vec<f64> = (0..grid.len())
            .map(|i| (c.kappa * lap.data()[i] + c.rho_bar * ta * adv_g[i] + ta * c.dp_dtheta * drift) / rcp)
            .collect();
        let induction = self.induction_rhs(&state.b1, &state.u)?;
        let lap_b = fields::lap_h_raw(&hg, state.b1.data());

        // (material b¹ rate, its magnetic weight in the heat equation)
        let (mat_b, weight): (Vec<f64>, f64) = match self.cfg.model {
            LimitModel::Literal => (lap_b.iter().map(|v| c.zeta * v).collect(), -c.b_bar),
            LimitModel::Consistent => {
                let gamma = c.b_bar / (c.rho_bar * c.dp_drho);
                let den = 1.0 + gamma * c.b_bar - gamma * c.dp_dtheta * ta * c.b_bar / rcp;
                let q = fields::vertical::depth_average(&grid, &base);
                let ag = fields::vertical::depth_average(&grid, &adv_g);
                let x = (0..hg.len())
                    .map(|h| {
                        let forcing = c.rho_bar * ag[h] + c.dp_dtheta * drift - c.dp_dtheta * q[h];
                        (c.zeta * lap_b[h] + gamma * forcing) / den
                    })
                    .collect();
                (x, c.b_bar)
            }
        };
        let theta_rate: Vec<f64> = (0..grid.len())
            .map(|i| {
                base[i] - ta * weight * mat_b[i % l] / rcp - adv_t[i] + src.theta1.as_ref().map_or(0.0, |s| s[i])
            })
            .collect();
        // ∂tb¹ = material rate − div(b¹U)
        let b_rate: Vec<f64> = (0..hg.len())
            .map(|h| {
                mat_b[h] + induction.data()[h] - c.zeta * lap_b[h] + src.b1.as_ref().map_or(0.0, |s| s[h])
            })
            .collect();
        Ok((theta_rate, b_rate, drift))
    }

    /// Diffusivity of `b¹` treated implicitly.
    fn zeta_implicit(&self) -> f64 {
        let c = &self.coef;
        match self.cfg.model {
            LimitModel::Literal => c.zeta,
            LimitModel::Consistent => {
                let gamma = c.b_bar / (c.rho_bar * c.dp_drho);
                let ta = c.theta_bar * c.alpha;
                c.zeta / (1.0 + gamma * c.b_bar - gamma * c.dp_dtheta * ta * c.b_bar / (c.rho_bar * c.cp))
            }
        }
    }

    /// Explicit right side of the `ϑ¹` equation and the mean drift `d⟨ϑ¹⟩/dt`
    /// obtained from the integrated heat balance.
    pub fn heat_rhs(&self, state: &ObmState) -> Result<(ScalarField, f64)> {
        let (rate, _, drift) = self.rates(state, &ObmSources::default())?;
        Ok((ScalarField::from_vec(self.cfg.grid, rate), drift))
    }

    /// `P[−(U·∇)U + (μ/ϱ̄)Δ_hU + ⟨ϱ¹∇_hG⟩/ϱ̄]`.
    pub fn momentum_rhs(&self, state: &ObmState) -> Result<VectorField> {
        let pre = self.momentum_explicit(state, None)?;
        let g = self.hgrid;
        let nu = self.coef.mu / self.coef.rho_bar;
        let mut comps = [pre.comp(0).to_vec(), pre.comp(1).to_vec(), vec![0.0; g.len()]];
        for (c, u) in comps.iter_mut().zip([state.u.comp(0), state.u.comp(1)]) {
            let lap = fields::lap_h_raw(&g, u);
            c.iter_mut().zip(&lap).for_each(|(a, l)| *a += nu * l);
        }
        fields::leray_project(&VectorField::new(g, comps)?)
    }

    /// The projected non-diffusive momentum terms.
    fn momentum_explicit(&self, state: &ObmState, source: Option<&[Vec<f64>; 2]>) -> Result<VectorField> {
        let g = self.hgrid;
        let grid = self.cfg.grid;
        let n = g.len();
        if grid.n2 == 1 {
            return Ok(VectorField::zeros(g));
        }
        let rho1 = self.boussinesq_rho(&state.theta1, &state.b1)?;
        let mut f1: Vec<f64> = rho1.data().iter().zip(&self.grad_g.0).map(|(r, d)| r * d).collect();
        let mut f2: Vec<f64> = rho1.data().iter().zip(&self.grad_g.1).map(|(r, d)| r * d).collect();
        fields::dealias_raw(&grid, &mut f1);
        fields::dealias_raw(&grid, &mut f2);
        let f1 = vertical::depth_average(&grid, &f1);
        let f2 = vertical::depth_average(&grid, &f2);

        let (u1, u2) = (state.u.comp(0), state.u.comp(1));
        let (a11, a12) = fields::grad_h_raw(&g, u1);
        let (a21, a22) = fields::grad_h_raw(&g, u2);
        let mut c1 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for i in 0..n {
            c1[i] = -(u1[i] * a11[i] + u2[i] * a12[i]);
            c2[i] = -(u1[i] * a21[i] + u2[i] * a22[i]);
        }
        fields::dealias_raw(&g, &mut c1);
        fields::dealias_raw(&g, &mut c2);
        let rb = self.coef.rho_bar;
        for i in 0..n {
            c1[i] += f1[i] / rb + source.map_or(0.0, |s| s[0][i]);
            c2[i] += f2[i] / rb + source.map_or(0.0, |s| s[1][i]);
        }
        fields::leray_project(&VectorField::new(g, [c1, c2, vec![0.0; n]])?)
    }

    /// Non-stiff parts of all three equations at time `t`.
    fn explicit(&self, state: &ObmState, t: f64) -> Result<(Vec<f64>, Vec<f64>, VectorField)> {
        let src = self.cfg.source.as_ref().map(|h| h(t, &self.cfg.grid)).unwrap_or_default();
        let (heat, b_rate, _) = self.rates(state, &src)?;
        let lap = fields::laplacian(&state.theta1)?;
        let k = self.theta_diffusivity();
        let nt: Vec<f64> = heat.iter().zip(lap.data()).map(|(h, l)| h - k * l).collect();

        let lap_b = fields::lap_h_raw(&self.hgrid, state.b1.data());
        let z = self.zeta_implicit();
        let nb: Vec<f64> = b_rate.iter().zip(&lap_b).map(|(r, l)| r - z * l).collect();

        let nu = if self.velocity_active() {
            self.momentum_explicit(state, src.u.as_ref())?
        } else {
            VectorField::zeros(self.hgrid)
        };
        Ok((nt, nb, nu))
    }

    fn theta_diffusivity(&self) -> f64 {
        self.coef.kappa / (self.coef.rho_bar * self.coef.cp)
    }

    /// `(I − dt/2·νΔ_h)⁻¹[(I + dt/2·νΔ_h)y + e]`, diagonal in Fourier space.
    fn cn_horizontal(&self, y: &[f64], e: &[f64], nu: f64) -> Vec<f64> {
        let g = self.hgrid;
        let dt = self.cfg.dt;
        let mut sy = spectral::forward(&g, y);
        let se = spectral::forward(&g, e);
        let mut idx = 0;
        spectral::map_modes(&g, &mut sy, |m1, m2, c| {
            let k1 = spectral::wavenumber(g.n1, m1);
            let k2 = if g.n2 > 1 { spectral::wavenumber(g.n2, m2) } else { 0.0 };
            let d = 0.5 * dt * nu * (k1 * k1 + k2 * k2);
            *c = (*c * (1.0 - d) + se[idx]) / (1.0 + d);
            idx += 1;
        });
        spectral::inverse(&g, sy)
    }

    /// Crank–Nicolson solve for `ϑ¹` with Dirichlet wall rows.
    fn cn_theta(&self, y: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        let grid = self.cfg.grid;
        let dt = self.cfg.dt;
        let k = self.theta_diffusivity();
        let ly = fields::laplacian(&ScalarField::from_vec(grid, y.to_vec()))?;
        let rhs: Vec<f64> = (0..grid.len()).map(|i| y[i] + 0.5 * dt * k * ly.data()[i] + e[i]).collect();
        let mut s = spectral::forward(&grid, &rhs);
        let (n1, n2, n3) = (grid.n1, grid.n2, grid.n3);
        let l = grid.layer_len();
        let r = 0.5 * dt * k / (grid.h3() * grid.h3());
        let mut lower = vec![-r; n3];
        let mut upper = vec![-r; n3];
        let mut diag = vec![0.0; n3];
        let mut col = vec![Complex64::new(0.0, 0.0); n3];
        lower[0] = 0.0;
        upper[0] = 0.0;
        lower[n3 - 1] = 0.0;
        upper[n3 - 1] = 0.0;
        diag[0] = 1.0;
        diag[n3 - 1] = 1.0;
        for m2 in 0..n2 {
            let k2 = if n2 > 1 { spectral::wavenumber(n2, m2) } else { 0.0 };
            for m1 in 0..n1 {
                let k1 = spectral::wavenumber(n1, m1);
                let slot = m1 + n1 * m2;
                let kk = k1 * k1 + k2 * k2;
                for d in diag.iter_mut().take(n3 - 1).skip(1) {
                    *d = 1.0 + 2.0 * r + 0.5 * dt * k * kk;
                }
                for (z, c) in col.iter_mut().enumerate() {
                    *c = s[slot + l * z];
                }
                col[0] = self.wall_hat.0[slot];
                col[n3 - 1] = self.wall_hat.1[slot];
                vertical::solve_tridiagonal(&lower, &diag, &upper, &mut col);
                for (z, c) in col.iter().enumerate() {
                    s[slot + l * z] = *c;
                }
            }
        }
        let mut out = spectral::inverse(&grid, s);
        self.impose_walls(&mut out);
        Ok(out)
    }

    fn implicit_update(
        &self,
        base: &ObmState,
        nt: &[f64],
        nb: &[f64],
        nu: &VectorField,
        t: f64,
    ) -> Result<ObmState> {
        let dt = self.cfg.dt;
        let scale = |v: &[f64]| v.iter().map(|x| x * dt).collect::<Vec<_>>();
        let theta = self.cn_theta(base.theta1.data(), &scale(nt))?;
        let b1 = self.cn_horizontal(base.b1.data(), &scale(nb), self.zeta_implicit());
        let u = if self.velocity_active() {
            let visc = self.coef.mu / self.coef.rho_bar;
            let c1 = self.cn_horizontal(base.u.comp(0), &scale(nu.comp(0)), visc);
            let c2 = self.cn_horizontal(base.u.comp(1), &scale(nu.comp(1)), visc);
            fields::leray_project(&VectorField::new(self.hgrid, [c1, c2, vec![0.0; self.hgrid.len()]])?)?
        } else {
            base.u.clone()
        };
        let theta1 = ScalarField::new(self.cfg.grid, theta)?;
        let chi = self.coef.dp_dtheta * fields::mean(&theta1);
        Ok(ObmState { u, theta1, b1: ScalarField::new(self.hgrid, b1)?, chi, t })
    }

    fn check_cfl(&self, state: &ObmState) -> Result<()> {
        let h = self.hgrid.h1().min(if self.hgrid.n2 > 1 { self.hgrid.h2() } else { f64::INFINITY });
        let c = state.u.max_norm() * self.cfg.dt / h;
        if c > CFL_LIMIT {
            return Err(Error::Cfl(format!("|U|·dt/h = {c:.3} exceeds {CFL_LIMIT}")));
        }
        Ok(())
    }

    /// Advances the state by one step of size `cfg.dt`.
    pub fn step(&self, state: &ObmState) -> Result<ObmState> {
        self.check_cfl(state)?;
        let dt = self.cfg.dt;
        let t1 = state.t + dt;
        let (nt0, nb0, nu0) = self.explicit(state, state.t)?;
        let pred = self.implicit_update(state, &nt0, &nb0, &nu0, t1)?;
        let (nt1, nb1, nu1) = self.explicit(&pred, t1)?;
        let avg = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect::<Vec<_>>();
        let nu = nu0.lincomb(0.5, &nu1, 0.5)?;
        let next = self.implicit_update(state, &avg(&nt0, &nt1), &avg(&nb0, &nb1), &nu, t1)?;
        next.u.check_finite("U")?;
        Ok(next)
    }

    /// Maximum spectral divergence of `U`.
    pub fn max_div_u(&self, state: &ObmState) -> f64 {
        let d = fields::div_h_raw(&self.hgrid, state.u.comp(0), state.u.comp(1));
        d.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// RMS of `∂tϱ¹ + div(ϱ¹U)` between two consecutive states.
    pub fn continuity_residual(&self, prev: &ObmState, next: &ObmState) -> Result<f64> {
        let grid = self.cfg.grid;
        let dt = next.t - prev.t;
        if dt <= 0.0 {
            return Ok(0.0);
        }
        let r0 = self.boussinesq_rho(&prev.theta1, &prev.b1)?;
        let r1 = self.boussinesq_rho(&next.theta1, &next.b1)?;
        let flux_div = |r: &ScalarField, u: &VectorField| -> Result<Vec<f64>> {
            let ub = u.broadcast(&grid)?;
            let f1: Vec<f64> = r.data().iter().zip(ub.comp(0)).map(|(a, b)| a * b).collect();
            let f2: Vec<f64> = r.data().iter().zip(ub.comp(1)).map(|(a, b)| a * b).collect();
            Ok(fields::div_h_raw(&grid, &f1, &f2))
        };
        let (d0, d1) = (flux_div(&r0, &prev.u)?, flux_div(&r1, &next.u)?);
        let res: Vec<f64> = (0..grid.len())
            .map(|i| (r1.data()[i] - r0.data()[i]) / dt + 0.5 * (d0[i] + d1[i]))
            .collect();
        Ok(fields::mean_square(&ScalarField::from_vec(grid, res)).sqrt())
    }

    pub fn diagnostics(&self, state: &ObmState, continuity_residual: f64) -> ObmDiagnostics {
        let hg = &self.hgrid;
        let vol = self.cfg.grid.volume();
        let u2 = ScalarField::from_vec(
            *hg,
            (0..hg.len()).map(|i| state.u.comp(0)[i].powi(2) + state.u.comp(1)[i].powi(2)).collect(),
        );
        ObmDiagnostics {
            t: state.t,
            mean_theta1: fields::mean(&state.theta1),
            chi: state.chi,
            kinetic: 0.5 * self.coef.rho_bar * vol * fields::mean(&u2),
            magnetic: 0.5 * vol * fields::mean_square(&state.b1),
            continuity_residual,
            max_div_u: self.max_div_u(state),
            mean_b1: fields::mean(&state.b1),
        }
    }

    /// Steps until `t_end`, calling `observe` after the initial state and after
    /// every step.
    pub fn run(
        &self,
        mut state: ObmState,
        mut observe: impl FnMut(&ObmState, &ObmDiagnostics),
    ) -> Result<ObmState> {
        observe(&state, &self.diagnostics(&state, 0.0));
        let steps = (self.cfg.t_end / self.cfg.dt).round() as usize;
        for _ in 0..steps {
            let next = self.step(&state)?;
            let res = self.continuity_residual(&state, &next)?;
            observe(&next, &self.diagnostics(&next, res));
            state = next;
        }
        Ok(state)
    }

    /// Leray pressure of the momentum balance and the absorbed magnetic part
    /// `(b¹)²/2`, reported separately.
    pub fn pressure_fields(&self, state: &ObmState) -> Result<(ScalarField, ScalarField)> {
        let g = self.hgrid;
        let n = g.len();
        let magnetic = state.b1.map(|b| 0.5 * b * b);
        if g.n2 == 1 {
            return Ok((ScalarField::zeros(g), magnetic));
        }
        let rho1 = self.boussinesq_rho(&state.theta1, &state.b1)?;
        let grid = self.cfg.grid;
        let f1 = vertical::depth_average(&grid, &rho1.data().iter().zip(&self.grad_g.0).map(|(r, d)| r * d).collect::<Vec<_>>());
        let f2 = vertical::depth_average(&grid, &rho1.data().iter().zip(&self.grad_g.1).map(|(r, d)| r * d).collect::<Vec<_>>());
        let (u1, u2) = (state.u.comp(0), state.u.comp(1));
        let (a11, a12) = fields::grad_h_raw(&g, u1);
        let (a21, a22) = fields::grad_h_raw(&g, u2);
        let rb = self.coef.rho_bar;
        let c1: Vec<f64> = (0..n).map(|i| f1[i] - rb * (u1[i] * a11[i] + u2[i] * a12[i])).collect();
        let c2: Vec<f64> = (0..n).map(|i| f2[i] - rb * (u1[i] * a21[i] + u2[i] * a22[i])).collect();
        // ΔΠ = div(forcing)
        let mut s = spectral::forward(&g, &fields::div_h_raw(&g, &c1, &c2));
        spectral::map_modes(&g, &mut s, |m1, m2, c| {
            let k1 = spectral::first_derivative_wavenumber(g.n1, m1);
            let k2 = spectral::first_derivative_wavenumber(g.n2, m2);
            let kk = k1 * k1 + k2 * k2;
            *c = if kk > 0.0 { -*c / kk } else { Complex64::new(0.0, 0.0) };
        });
        Ok((ScalarField::new(g, spectral::inverse(&g, s))?, magnetic))
    }
}
