//! The primitive scaled compressible Navier–Stokes–Fourier–MHD system on the
//! 2.5D strip `T¹ × (0,1)` (fields independent of `x2`, vectors with three
//! components), with `Ma = Al = ε` and `Fr = √ε`.
//!
//! Discretisation: Fourier in `x1`, centred differences in `x3` with ghost-node
//! parities at the walls (`u1, u2` even, `u3` odd, everything else one-sided).
//! Explicit SSP-RK2 in time; after every step `B` is replaced by the curl of a
//! reconstructed vector potential, which makes it discretely solenoidal.
//!
//! The temperature equation replaces the entropy balance:
//! `ρ∂θe·Dθ/Dt = −θ∂θp div u + ε²𝕊:∇u + div(κ∇θ) + ζ|curl B|²`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::fields::{self, spectral, vertical, Grid, Parity, ScalarField, VectorField};
use crate::obm::WallProfile;
use crate::thermo::{Gas, ReferenceState};
use crate::{Error, Result};

/// Upper bound on the CFL factor accepted by the configuration.
pub const MAX_CFL: f64 = 0.4;

/// `𝕊 = μ(∇u + ∇ᵀu − ⅔div u 𝕀) + η div u 𝕀` with `grad_u[i][j] = ∂_j u_i`.
pub fn viscous_stress(gas: &Gas, theta: f64, grad_u: [[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let mu = gas.mu(theta)?;
    let eta = gas.eta(theta)?;
    let div = grad_u[0][0] + grad_u[1][1] + grad_u[2][2];
    let mut s = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            s[i][j] = mu * (grad_u[i][j] + grad_u[j][i]);
        }
        s[i][i] += (eta - 2.0 * mu / 3.0) * div;
    }
    Ok(s)
}

/// `𝕊:∇u` written as `2μ|dev sym ∇u|² + η(div u)²`, non-negative by
/// construction.
pub fn dissipation(mu: f64, eta: f64, grad_u: [[f64; 3]; 3]) -> f64 {
    let div = grad_u[0][0] + grad_u[1][1] + grad_u[2][2];
    let mut dev2 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = 0.5 * (grad_u[i][j] + grad_u[j][i]) - if i == j { div / 3.0 } else { 0.0 };
            dev2 += d * d;
        }
    }
    2.0 * mu * dev2 + eta * div * div
}

/// Additive right-hand sides, used by manufactured solutions.
#[derive(Debug, Clone, Default)]
pub struct MhdSources {
    pub rho: Option<Vec<f64>>,
    pub u: Option<[Vec<f64>; 3]>,
    pub theta: Option<Vec<f64>>,
    pub b: Option<[Vec<f64>; 3]>,
}

pub type MhdSourceHook = Arc<dyn Fn(f64, &Grid) -> MhdSources + Send + Sync>;

#[derive(Clone)]
pub struct MhdConfig {
    pub gas: Gas,
    pub reference: ReferenceState,
    /// A `Strip2` grid.
    pub grid: Grid,
    pub eps: f64,
    /// Gravitational potential.
    pub g: ScalarField,
    /// Wall temperature is `ϑ̄ + ε·theta_b`.
    pub theta_b: WallProfile,
    /// Fraction of the stability bound used for the step (≤ [`MAX_CFL`]).
    pub cfl: f64,
    /// Fixed step; must respect the stability bound.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub source: Option<MhdSourceHook>,
}

impl fmt::Debug for MhdConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MhdConfig")
            .field("gas", &self.gas)
            .field("reference", &self.reference)
            .field("grid", &self.grid)
            .field("eps", &self.eps)
            .field("cfl", &self.cfl)
            .field("dt", &self.dt)
            .field("t_end", &self.t_end)
            .field("source", &self.source.is_some())
            .finish_non_exhaustive()
    }
}

impl MhdConfig {
    pub fn new(gas: Gas, reference: ReferenceState, grid: Grid, eps: f64, t_end: f64) -> Self {
        MhdConfig {
            gas,
            reference,
            grid,
            eps,
            g: crate::obm::default_potential(&grid),
            theta_b: WallProfile::uniform(&grid, 0.0, 0.0),
            cfl: 0.35,
            dt: None,
            t_end,
            source: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveState {
    pub rho: ScalarField,
    pub u: VectorField,
    pub theta: ScalarField,
    pub b: VectorField,
    pub eps: f64,
    pub t: f64,
}

impl PrimitiveState {
    /// Uniform rest state `(ϱ̄, 0, ϑ̄, (0,0,b̄))`.
    pub fn rest(grid: Grid, rf: &ReferenceState, eps: f64) -> Self {
        PrimitiveState {
            rho: ScalarField::constant(grid, rf.rho_bar),
            u: VectorField::zeros(grid),
            theta: ScalarField::constant(grid, rf.theta_bar),
            b: VectorField::from_fn(grid, |_, _, _| [0.0, 0.0, rf.b_bar]),
            eps,
            t: 0.0,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    pub fn validate(&self) -> Result<()> {
        self.rho.check_finite("density")?;
        self.theta.check_finite("temperature")?;
        self.u.check_finite("velocity")?;
        self.b.check_finite("magnetic field")?;
        let (rmin, tmin) = (self.rho.min(), self.theta.min());
        if !(rmin > 0.0) || !(tmin > 0.0) {
            return Err(Error::Positivity(format!("min ρ = {rmin:e}, min θ = {tmin:e} at t = {}", self.t)));
        }
        Ok(())
    }
}

/// Packed unknowns `(ρ, u1, u2, u3, θ, B1, B2, B3)`.
#[derive(Clone)]
struct Q([Vec<f64>; 8]);

const RHO: usize = 0;
const U: usize = 1;
const TH: usize = 4;
const B: usize = 5;

impl Q {
    fn from_state(s: &PrimitiveState) -> Q {
        Q([
            s.rho.data().to_vec(),
            s.u.comp(0).to_vec(),
            s.u.comp(1).to_vec(),
            s.u.comp(2).to_vec(),
            s.theta.data().to_vec(),
            s.b.comp(0).to_vec(),
            s.b.comp(1).to_vec(),
            s.b.comp(2).to_vec(),
        ])
    }

    fn into_state(self, grid: Grid, eps: f64, t: f64) -> PrimitiveState {
        let [rho, u1, u2, u3, th, b1, b2, b3] = self.0;
        PrimitiveState {
            rho: ScalarField::from_vec(grid, rho),
            u: VectorField::from_vecs(grid, [u1, u2, u3]),
            theta: ScalarField::from_vec(grid, th),
            b: VectorField::from_vecs(grid, [b1, b2, b3]),
            eps,
            t,
        }
    }

    /// `a·self + b·(other + dt·rate)`.
    fn stage(&self, a: f64, other: &Q, b: f64, rate: &Q, dt: f64) -> Q {
        let mut out = self.clone();
        for c in 0..8 {
            for i in 0..out.0[c].len() {
                out.0[c][i] = a * self.0[c][i] + b * (other.0[c][i] + dt * rate.0[c][i]);
            }
        }
        out
    }
}

/// Per-mode reconstruction of `B` from a vector potential `A e2`:
/// `B1 = −∂3A`, `B3 = ∂1A`, with `∂3A = 0` on the walls so that `B1` vanishes
/// there. The vertical derivative is the same one-sided-closed operator used to
/// measure `div B`, so the result is solenoidal to roundoff.
struct BProjector {
    grid: Grid,
    d: DMatrix<f64>,
    /// LU factors indexed by the non-negative mode number.
    lu: Vec<Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>>,
}

impl BProjector {
    fn new(grid: Grid) -> Result<Self> {
        let n = grid.n3;
        let h = grid.h3();
        let mut d = DMatrix::zeros(n, n);
        for k in 1..n - 1 {
            d[(k, k - 1)] = -0.5 / h;
            d[(k, k + 1)] = 0.5 / h;
        }
        d[(0, 0)] = -1.5 / h;
        d[(0, 1)] = 2.0 / h;
        d[(0, 2)] = -0.5 / h;
        d[(n - 1, n - 1)] = 1.5 / h;
        d[(n - 1, n - 2)] = -2.0 / h;
        d[(n - 1, n - 3)] = 0.5 / h;
        let dd = &d * &d;
        let mut lu = Vec::new();
        for m in 0..=grid.n1 / 2 {
            let k = spectral::first_derivative_wavenumber(grid.n1, m);
            if k == 0.0 {
                lu.push(None);
                continue;
            }
            let mut a = dd.clone();
            for i in 0..n {
                a[(i, i)] -= k * k;
            }
            for j in 0..n {
                a[(0, j)] = d[(0, j)];
                a[(n - 1, j)] = d[(n - 1, j)];
            }
            let f = a.lu();
            if !f.is_invertible() {
                return Err(Error::Numerical(format!("singular potential system for mode {m}")));
            }
            lu.push(Some(f));
        }
        Ok(BProjector { grid, d, lu })
    }

    fn project(&self, b1: &mut Vec<f64>, b3: &mut Vec<f64>) -> Result<()> {
        let g = self.grid;
        let (n1, n3) = (g.n1, g.n3);
        let mut s1 = spectral::forward(&g, b1);
        let mut s3 = spectral::forward(&g, b3);
        let w = g.vertical_weights();
        let i = Complex64::new(0.0, 1.0);
        for m in 0..n1 {
            let sm = spectral::signed_mode(n1, m);
            let k = spectral::first_derivative_wavenumber(n1, m);
            if m == 0 {
                let mean: Complex64 = (0..n3).map(|z| s3[z * n1] * w[z]).sum();
                for z in 0..n3 {
                    s3[z * n1] = mean;
                }
                s1[0] = Complex64::new(0.0, 0.0);
                s1[(n3 - 1) * n1] = Complex64::new(0.0, 0.0);
                continue;
            }
            if k == 0.0 {
                for z in 0..n3 {
                    s1[m + z * n1] = Complex64::new(0.0, 0.0);
                    s3[m + z * n1] = Complex64::new(0.0, 0.0);
                }
                continue;
            }
            let lu = self.lu[sm.unsigned_abs() as usize].as_ref().expect("factorised mode");
            let c1 = DVector::from_iterator(n3, (0..n3).map(|z| s1[m + z * n1]));
            let c3 = DVector::from_iterator(n3, (0..n3).map(|z| s3[m + z * n1]));
            // curl_2 B = ∂3B1 − ∂1B3 and ΔA = −curl_2 B.
            let d_c1: Vec<Complex64> = (0..n3)
                .map(|r| (0..n3).map(|c| c1[c] * self.d[(r, c)]).sum())
                .collect();
            let mut rhs_re = DVector::zeros(n3);
            let mut rhs_im = DVector::zeros(n3);
            for r in 1..n3 - 1 {
                let v = -(d_c1[r] - i * k * c3[r]);
                rhs_re[r] = v.re;
                rhs_im[r] = v.im;
            }
            let are = lu.solve(&rhs_re).ok_or_else(|| Error::Numerical("potential solve".into()))?;
            let aim = lu.solve(&rhs_im).ok_or_else(|| Error::Numerical("potential solve".into()))?;
            let da_re = &self.d * &are;
            let da_im = &self.d * &aim;
            for z in 0..n3 {
                let a = Complex64::new(are[z], aim[z]);
                s1[m + z * n1] = -Complex64::new(da_re[z], da_im[z]);
                s3[m + z * n1] = i * k * a;
            }
        }
        *b1 = spectral::inverse(&g, s1);
        *b3 = spectral::inverse(&g, s3);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhdDiagnostics {
    pub t: f64,
    pub mass: f64,
    pub momentum: f64,
    pub energy: f64,
    pub ballistic: f64,
    pub max_div_b: f64,
    pub min_rho: f64,
    pub min_theta: f64,
    pub entropy_production: f64,
    /// Smallest pointwise value over the three production terms.
    pub min_production_term: f64,
    pub mean_b3: f64,
}

impl MhdDiagnostics {
    pub const CSV_HEADER: &'static str =
        "t,mass,momentum,energy,ballistic_energy,max_div_b,min_rho,min_theta,entropy_production";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.t,
            self.mass,
            self.momentum,
            self.energy,
            self.ballistic,
            self.max_div_b,
            self.min_rho,
            self.min_theta,
            self.entropy_production
        )
    }
}

/// Result of a run: the last valid state and, if the run stopped early, why.
#[derive(Debug)]
pub struct MhdRun {
    pub state: PrimitiveState,
    pub steps: usize,
    pub failure: Option<Error>,
}

pub struct MhdSolver {
    cfg: MhdConfig,
    grad_g: (Vec<f64>, Vec<f64>),
    wall_theta: (Vec<f64>, Vec<f64>),
    projector: BProjector,
}

impl MhdSolver {
    pub fn new(cfg: MhdConfig) -> Result<Self> {
        cfg.reference.validate()?;
        let grid = cfg.grid;
        if grid.geometry != fields::Geometry::Strip2 {
            return Err(Error::Config("the primitive solver runs on the 2.5D strip".into()));
        }
        if !(cfg.eps > 0.0 && cfg.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be > 0, got {}", cfg.eps)));
        }
        if !(cfg.cfl > 0.0 && cfg.cfl <= MAX_CFL) {
            return Err(Error::Config(format!("cfl must lie in (0, {MAX_CFL}], got {}", cfg.cfl)));
        }
        if *cfg.g.grid() != grid {
            return Err(Error::Config("G must live on the solver grid".into()));
        }
        cfg.g.check_finite("G")?;
        let l = grid.layer_len();
        if cfg.theta_b.bottom.len() != l || cfg.theta_b.top.len() != l {
            return Err(Error::Config("wall profile does not match the grid".into()));
        }
        if let Some(dt) = cfg.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("invalid dt = {dt}")));
            }
        }
        let grad_g = (fields::d1_raw(&grid, cfg.g.data()), vertical::d3(&grid, cfg.g.data(), Parity::Free));
        let tb = cfg.reference.theta_bar;
        let wall_theta = (
            cfg.theta_b.bottom.iter().map(|v| tb + cfg.eps * v).collect(),
            cfg.theta_b.top.iter().map(|v| tb + cfg.eps * v).collect(),
        );
        let projector = BProjector::new(grid)?;
        Ok(MhdSolver { cfg, grad_g, wall_theta, projector })
    }

    pub fn config(&self) -> &MhdConfig {
        &self.cfg
    }

    /// Imposes the boundary conditions in place: `u3 = 0`, Dirichlet `θ`,
    /// `B1 = B2 = 0` on both walls.
    fn apply_bcs(&self, q: &mut Q) {
        let g = &self.cfg.grid;
        let l = g.layer_len();
        let top = l * (g.n3 - 1);
        for base in [0, top] {
            for c in 0..l {
                q.0[U + 2][base + c] = 0.0;
                q.0[B][base + c] = 0.0;
                q.0[B + 1][base + c] = 0.0;
            }
        }
        q.0[TH][..l].copy_from_slice(&self.wall_theta.0);
        q.0[TH][top..top + l].copy_from_slice(&self.wall_theta.1);
    }

    /// Makes an admissible initial state: boundary values and solenoidal `B`.
    pub fn prepare(&self, state: PrimitiveState) -> Result<PrimitiveState> {
        if *state.grid() != self.cfg.grid {
            return Err(Error::Field("state on the wrong grid".into()));
        }
        let (eps, t) = (state.eps, state.t);
        let mut q = Q::from_state(&state);
        self.apply_bcs(&mut q);
        self.project_b(&mut q)?;
        let s = q.into_state(self.cfg.grid, eps, t);
        s.validate()?;
        Ok(s)
    }

    fn project_b(&self, q: &mut Q) -> Result<()> {
        let [_, _, _, _, _, b1, _, b3] = &mut q.0;
        self.projector.project(b1, b3)
    }

    fn dx(&self, f: &[f64]) -> Vec<f64> {
        fields::d1_raw(&self.cfg.grid, f)
    }

    fn dz(&self, f: &[f64], p: Parity) -> Vec<f64> {
        vertical::d3(&self.cfg.grid, f, p)
    }

    /// Time derivatives of all unknowns.
    fn rhs(&self, q: &Q, t: f64) -> Result<Q> {
        let grid = self.cfg.grid;
        let n = grid.len();
        let gas = &self.cfg.gas;
        let eps = self.cfg.eps;
        let (ie, ie2) = (1.0 / eps, 1.0 / (eps * eps));
        let [rho, u1, u2, u3, th, b1, b2, b3] = &q.0;

        if let Some(i) = (0..n).find(|&i| !(rho[i] > 0.0 && th[i] > 0.0)) {
            return Err(Error::Positivity(format!("ρ = {:e}, θ = {:e} at node {i}", rho[i], th[i])));
        }

        let mut p = vec![0.0; n];
        let mut p_th = vec![0.0; n];
        let mut e_th = vec![0.0; n];
        let mut mu = vec![0.0; n];
        let mut lam = vec![0.0; n];
        let mut kap = vec![0.0; n];
        let mut zet = vec![0.0; n];
        for i in 0..n {
            p[i] = gas.p_raw(rho[i], th[i]);
            p_th[i] = gas.dp_dtheta_raw(rho[i], th[i]);
            e_th[i] = gas.de_dtheta_raw(rho[i], th[i]);
            mu[i] = gas.mu_raw(th[i]);
            lam[i] = gas.eta_raw(th[i]) - 2.0 * mu[i] / 3.0;
            kap[i] = gas.kappa_raw(th[i]);
            zet[i] = gas.zeta_raw(th[i]);
        }

        let (u1x, u2x, u3x) = (self.dx(u1), self.dx(u2), self.dx(u3));
        let (u1z, u2z, u3z) = (self.dz(u1, Parity::Even), self.dz(u2, Parity::Even), self.dz(u3, Parity::Odd));
        let div: Vec<f64> = (0..n).map(|i| u1x[i] + u3z[i]).collect();
        let (thx, thz) = (self.dx(th), self.dz(th, Parity::Free));

        // continuity
        let m1: Vec<f64> = (0..n).map(|i| rho[i] * u1[i]).collect();
        let m3: Vec<f64> = (0..n).map(|i| rho[i] * u3[i]).collect();
        let (m1x, m3z) = (self.dx(&m1), self.dz(&m3, Parity::Odd));
        let drho: Vec<f64> = (0..n).map(|i| -(m1x[i] + m3z[i])).collect();

        // magnetic field and current
        let (b2x, b3x) = (self.dx(b2), self.dx(b3));
        let (b1z, b2z) = (self.dz(b1, Parity::Free), self.dz(b2, Parity::Free));
        let j1: Vec<f64> = b2z.iter().map(|v| -v).collect();
        let j2: Vec<f64> = (0..n).map(|i| b1z[i] - b3x[i]).collect();
        let j3 = b2x.clone();

        // viscous stress divergence
        let lap = |f: &[f64], par: Parity| -> Vec<f64> {
            let mut h = fields::lap_h_raw(&grid, f);
            let v = vertical::d33(&grid, f, par);
            h.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
            h
        };
        let (l1, l2, l3) = (lap(u1, Parity::Even), lap(u2, Parity::Even), lap(u3, Parity::Odd));
        let (mux, muz) = (self.dx(&mu), self.dz(&mu, Parity::Free));
        let (lamx, lamz) = (self.dx(&lam), self.dz(&lam, Parity::Free));
        let gd1 = self.dx(&div);
        let u1xz = self.dz(&u1x, Parity::Free);
        let u3zz = vertical::d33(&grid, u3, Parity::Odd);
        let (px, pz) = (self.dx(&p), self.dz(&p, Parity::Free));
        let (gx, gz) = (&self.grad_g.0, &self.grad_g.1);

        let mut du1 = vec![0.0; n];
        let mut du2 = vec![0.0; n];
        let mut du3 = vec![0.0; n];
        for i in 0..n {
            let gd3 = u1xz[i] + u3zz[i];
            let v1 = mu[i] * l1[i]
                + (mu[i] + lam[i]) * gd1[i]
                + div[i] * lamx[i]
                + mux[i] * 2.0 * u1x[i]
                + muz[i] * (u1z[i] + u3x[i]);
            let v2 = mu[i] * l2[i] + mux[i] * u2x[i] + muz[i] * u2z[i];
            let v3 = mu[i] * l3[i]
                + (mu[i] + lam[i]) * gd3
                + div[i] * lamz[i]
                + mux[i] * (u3x[i] + u1z[i])
                + muz[i] * 2.0 * u3z[i];
            let lor1 = j2[i] * b3[i] - j3[i] * b2[i];
            let lor2 = j3[i] * b1[i] - j1[i] * b3[i];
            let lor3 = j1[i] * b2[i] - j2[i] * b1[i];
            let r = rho[i];
            du1[i] = -(u1[i] * u1x[i] + u3[i] * u1z[i]) + (v1 - ie2 * px[i] + ie * r * gx[i] + ie2 * lor1) / r;
            du2[i] = -(u1[i] * u2x[i] + u3[i] * u2z[i]) + (v2 + ie2 * lor2) / r;
            du3[i] = -(u1[i] * u3x[i] + u3[i] * u3z[i]) + (v3 - ie2 * pz[i] + ie * r * gz[i] + ie2 * lor3) / r;
        }

        // induction, ∂tB = −curl E with E = B×u + ζJ
        let e2a: Vec<f64> = (0..n).map(|i| b3[i] * u1[i] - b1[i] * u3[i]).collect();
        let zb3x: Vec<f64> = (0..n).map(|i| zet[i] * b3x[i]).collect();
        let (e2az, zb3xz) = (self.dz(&e2a, Parity::Free), self.dz(&zb3x, Parity::Free));
        let diff1 = vertical::d3_flux(&grid, &zet, b1, Parity::Free);
        let db1: Vec<f64> = (0..n).map(|i| e2az[i] + diff1[i] - zb3xz[i]).collect();

        let e3: Vec<f64> = (0..n).map(|i| b1[i] * u2[i] - b2[i] * u1[i] + zet[i] * b2x[i]).collect();
        let e1a: Vec<f64> = (0..n).map(|i| b2[i] * u3[i] - b3[i] * u2[i]).collect();
        let (e3x, e1az) = (self.dx(&e3), self.dz(&e1a, Parity::Free));
        let diff2 = vertical::d3_flux(&grid, &zet, b2, Parity::Free);
        let db2: Vec<f64> = (0..n).map(|i| e3x[i] - e1az[i] + diff2[i]).collect();

        let e2: Vec<f64> = (0..n).map(|i| e2a[i] + zet[i] * j2[i]).collect();
        let db3: Vec<f64> = self.dx(&e2).iter().map(|v| -v).collect();

        // temperature
        let kthx: Vec<f64> = (0..n).map(|i| kap[i] * thx[i]).collect();
        let cond_x = self.dx(&kthx);
        let cond_z = vertical::d3_flux(&grid, &kap, th, Parity::Free);
        let mut dth = vec![0.0; n];
        for i in 0..n {
            let gu = [[u1x[i], 0.0, u1z[i]], [u2x[i], 0.0, u2z[i]], [u3x[i], 0.0, u3z[i]]];
            let sdu = dissipation(mu[i], lam[i] + 2.0 * mu[i] / 3.0, gu);
            let jj = j1[i] * j1[i] + j2[i] * j2[i] + j3[i] * j3[i];
            let num = -th[i] * p_th[i] * div[i] + eps * eps * sdu + cond_x[i] + cond_z[i] + zet[i] * jj;
            dth[i] = num / (rho[i] * e_th[i]) - (u1[i] * thx[i] + u3[i] * thz[i]);
        }

        let mut out = Q([drho, du1, du2, du3, dth, db1, db2, db3]);
        if let Some(hook) = &self.cfg.source {
            let s = hook(t, &grid);
            let add = |dst: &mut Vec<f64>, src: &Option<Vec<f64>>| {
                if let Some(v) = src {
                    dst.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                }
            };
            add(&mut out.0[RHO], &s.rho);
            add(&mut out.0[TH], &s.theta);
            if let Some([a, b, c]) = s.u {
                for (k, v) in [a, b, c].into_iter().enumerate() {
                    add(&mut out.0[U + k], &Some(v));
                }
            }
            if let Some([a, b, c]) = s.b {
                for (k, v) in [a, b, c].into_iter().enumerate() {
                    add(&mut out.0[B + k], &Some(v));
                }
            }
        }
        for f in out.0.iter_mut() {
            fields::dealias_raw(&grid, f);
        }
        // Boundary-held unknowns do not evolve.
        let l = grid.layer_len();
        let top = l * (grid.n3 - 1);
        for base in [0, top] {
            for c in 0..l {
                for comp in [U + 2, TH, B, B + 1] {
                    out.0[comp][base + c] = 0.0;
                }
            }
        }
        Ok(out)
    }

    /// Largest step allowed by the acoustic/Alfvénic and diffusive limits,
    /// scaled by `cfg.cfl`.
    pub fn stable_dt(&self, state: &PrimitiveState) -> f64 {
        let grid = self.cfg.grid;
        let gas = &self.cfg.gas;
        let eps = self.cfg.eps;
        let h = grid.h3().min(1.0 / grid.max_wavenumber());
        let mut fast: f64 = 0.0;
        let mut nu: f64 = 0.0;
        for i in 0..grid.len() {
            let (r, t) = (state.rho.data()[i], state.theta.data()[i]);
            let bb: f64 = (0..3).map(|c| state.b.comp(c)[i].powi(2)).sum();
            let c2 = gas.sound_speed_sq_raw(r, t) + bb / r;
            let speed: f64 = (0..3).map(|c| state.u.comp(c)[i].powi(2)).sum::<f64>().sqrt();
            fast = fast.max(c2.sqrt() + eps * speed);
            let mu = gas.mu_raw(t);
            let visc = (4.0 / 3.0 * mu + gas.eta_raw(t)) / r;
            let cond = gas.kappa_raw(t) / (r * gas.de_dtheta_raw(r, t));
            nu = nu.max(visc).max(cond).max(gas.zeta_raw(t));
        }
        let acoustic = if fast > 0.0 { h * eps / fast } else { f64::INFINITY };
        let diffusive = if nu > 0.0 { h * h / nu } else { f64::INFINITY };
        self.cfg.cfl * acoustic.min(diffusive)
    }

    fn check_dt(&self, state: &PrimitiveState, dt: f64) -> Result<()> {
        let limit = self.stable_dt(state) * MAX_CFL / self.cfg.cfl;
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl(format!("dt = {dt:e} exceeds the stability bound {limit:e}")));
        }
        Ok(())
    }

    /// One SSP-RK2 step followed by the divergence cleaning of `B`.
    pub fn step(&self, state: &PrimitiveState, dt: f64) -> Result<PrimitiveState> {
        self.check_dt(state, dt)?;
        let q0 = Q::from_state(state);
        let r0 = self.rhs(&q0, state.t)?;
        let mut q1 = q0.stage(0.0, &q0, 1.0, &r0, dt);
        self.apply_bcs(&mut q1);
        let r1 = self.rhs(&q1, state.t + dt)?;
        let mut q2 = q0.stage(0.5, &q1, 0.5, &r1, dt);
        self.apply_bcs(&mut q2);
        self.project_b(&mut q2)?;
        let next = q2.into_state(self.cfg.grid, state.eps, state.t + dt);
        next.validate()?;
        Ok(next)
    }

    /// Step size used by [`MhdSolver::run`]: the configured one, or the
    /// stability bound of the initial state rounded so that `t_end` is hit.
    pub fn run_dt(&self, state: &PrimitiveState) -> (f64, usize) {
        let t_end = self.cfg.t_end;
        let dt = self.cfg.dt.unwrap_or_else(|| self.stable_dt(state));
        if t_end <= 0.0 {
            return (dt, 0);
        }
        let steps = (t_end / dt).ceil().max(1.0) as usize;
        (t_end / steps as f64, steps)
    }

    /// Runs to `t_end`. Stops at the first failure and returns the last valid
    /// state together with the error.
    pub fn run(&self, state: PrimitiveState, mut observe: impl FnMut(&PrimitiveState, usize)) -> MhdRun {
        let (dt, steps) = self.run_dt(&state);
        let mut state = state;
        observe(&state, 0);
        for k in 0..steps {
            match self.step(&state, dt) {
                Ok(next) => {
                    state = next;
                    observe(&state, k + 1);
                }
                Err(e) => return MhdRun { state, steps: k, failure: Some(e) },
            }
        }
        MhdRun { state, steps, failure: None }
    }

    /// `max |∂1B1 + ∂3B3|` with the discrete operators of the solver.
    pub fn max_div_b(&self, state: &PrimitiveState) -> f64 {
        let d1 = self.dx(state.b.comp(0));
        let d3 = self.dz(state.b.comp(2), Parity::Free);
        d1.iter().zip(&d3).fold(0.0, |m, (a, b)| m.max((a + b).abs()))
    }

    /// Pointwise entropy production terms
    /// `(ε²𝕊:∇u/θ, κ|∇θ|²/θ², ζ|curl B|²/θ)`.
    pub fn entropy_production_terms(&self, state: &PrimitiveState) -> Result<[ScalarField; 3]> {
        state.validate()?;
        let grid = self.cfg.grid;
        let n = grid.len();
        let gas = &self.cfg.gas;
        let eps = state.eps;
        let (u1, u2, u3) = (state.u.comp(0), state.u.comp(1), state.u.comp(2));
        let th = state.theta.data();
        let (u1x, u2x, u3x) = (self.dx(u1), self.dx(u2), self.dx(u3));
        let (u1z, u2z, u3z) = (self.dz(u1, Parity::Even), self.dz(u2, Parity::Even), self.dz(u3, Parity::Odd));
        let (thx, thz) = (self.dx(th), self.dz(th, Parity::Free));
        let (b1, b2, b3) = (state.b.comp(0), state.b.comp(1), state.b.comp(2));
        let (b2x, b3x) = (self.dx(b2), self.dx(b3));
        let (b1z, b2z) = (self.dz(b1, Parity::Free), self.dz(b2, Parity::Free));
        let mut visc = vec![0.0; n];
        let mut cond = vec![0.0; n];
        let mut ohm = vec![0.0; n];
        for i in 0..n {
            let t = th[i];
            let gu = [[u1x[i], 0.0, u1z[i]], [u2x[i], 0.0, u2z[i]], [u3x[i], 0.0, u3z[i]]];
            visc[i] = eps * eps * dissipation(gas.mu_raw(t), gas.eta_raw(t), gu) / t;
            cond[i] = gas.kappa_raw(t) * (thx[i] * thx[i] + thz[i] * thz[i]) / (t * t);
            let jj = b2z[i].powi(2) + (b1z[i] - b3x[i]).powi(2) + b2x[i].powi(2);
            ohm[i] = gas.zeta_raw(t) * jj / t;
        }
        Ok([
            ScalarField::from_vec(grid, visc),
            ScalarField::from_vec(grid, cond),
            ScalarField::from_vec(grid, ohm),
        ])
    }

    /// `ψ = ϑ̄ + ε·(linear interpolation of the wall data across the layer)`.
    pub fn default_psi(&self) -> ScalarField {
        let grid = self.cfg.grid;
        let l = grid.layer_len();
        let (bot, top) = (&self.cfg.theta_b.bottom, &self.cfg.theta_b.top);
        let tb = self.cfg.reference.theta_bar;
        let eps = self.cfg.eps;
        let data = (0..grid.len())
            .map(|i| {
                let (c, z) = (i % l, grid.x3(i / l));
                tb + eps * ((1.0 - z) * bot[c] + z * top[c])
            })
            .collect();
        ScalarField::from_vec(grid, data)
    }

    /// `∫[½ρ|u|² + ε⁻²(ρe − ψρs + ½|B|²)]`.
    pub fn ballistic_energy(&self, state: &PrimitiveState, psi: &ScalarField) -> Result<f64> {
        ballistic_energy(&self.cfg.gas, state, psi)
    }

    pub fn diagnostics(&self, state: &PrimitiveState) -> Result<MhdDiagnostics> {
        let grid = self.cfg.grid;
        let gas = &self.cfg.gas;
        let vol = grid.volume();
        let n = grid.len();
        let eps = state.eps;
        let integral = |f: Vec<f64>| vol * fields::mean(&ScalarField::from_vec(grid, f));
        let rho = state.rho.data();
        let th = state.theta.data();
        let g = self.cfg.g.data();
        let mass = integral(rho.to_vec());
        let momentum = integral((0..n).map(|i| rho[i] * state.u.comp(0)[i]).collect());
        let energy = integral(
            (0..n)
                .map(|i| {
                    let uu: f64 = (0..3).map(|c| state.u.comp(c)[i].powi(2)).sum();
                    let bb: f64 = (0..3).map(|c| state.b.comp(c)[i].powi(2)).sum();
                    0.5 * rho[i] * uu + (gas.rho_e_raw(rho[i], th[i]) + 0.5 * bb) / (eps * eps)
                        - rho[i] * g[i] / eps
                })
                .collect(),
        );
        let ballistic = self.ballistic_energy(state, &self.default_psi())?;
        let terms = self.entropy_production_terms(state)?;
        let min_term = terms.iter().map(|t| t.min()).fold(f64::INFINITY, f64::min);
        let production = terms.iter().map(|t| vol * fields::mean(t)).sum();
        Ok(MhdDiagnostics {
            t: state.t,
            mass,
            momentum,
            energy,
            ballistic,
            max_div_b: self.max_div_b(state),
            min_rho: state.rho.min(),
            min_theta: state.theta.min(),
            entropy_production: production,
            min_production_term: min_term,
            mean_b3: fields::mean(&state.b.component(2)),
        })
    }
}

/// `∫[½ρ|u|² + ε⁻²(ρe − ψρs + ½|B|²)]` for a positive `ψ`.
pub fn ballistic_energy(gas: &Gas, state: &PrimitiveState, psi: &ScalarField) -> Result<f64> {
    let grid = *state.grid();
    if psi.min() <= 0.0 {
        return Err(Error::Domain("ballistic energy needs ψ > 0".into()));
    }
    state.validate()?;
    let eps = state.eps;
    let (rho, th) = (state.rho.data(), state.theta.data());
    let f: Vec<f64> = (0..grid.len())
        .map(|i| {
            let uu: f64 = (0..3).map(|c| state.u.comp(c)[i].powi(2)).sum();
            let bb: f64 = (0..3).map(|c| state.b.comp(c)[i].powi(2)).sum();
            let thermal = gas.rho_e_raw(rho[i], th[i]) - psi.data()[i] * gas.rho_s_raw(rho[i], th[i]);
            0.5 * rho[i] * uu + (thermal + 0.5 * bb) / (eps * eps)
        })
        .collect();
    Ok(grid.volume() * fields::mean(&ScalarField::from_vec(grid, f)))
}
