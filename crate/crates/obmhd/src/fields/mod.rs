//! Discrete geometry and calculus: Fourier in the periodic directions,
//! second-order finite differences across the layer.

mod grid;
pub mod snapshot;
pub mod spectral;
pub mod vertical;

pub use grid::{Geometry, Grid, PERIOD};
pub use vertical::Parity;

use num_complex::Complex64;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    comps: [Vec<f64>; 3],
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl ScalarField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Field(format!(
                "field has {} values, grid expects {}",
                data.len(),
                grid.len()
            )));
        }
        check_finite(&data, "scalar field")?;
        Ok(ScalarField { grid, data })
    }

    pub(crate) fn from_vec(grid: Grid, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        ScalarField { grid, data }
    }

    pub fn zeros(grid: Grid) -> Self {
        ScalarField { grid, data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, v: f64) -> Self {
        ScalarField { grid, data: vec![v; grid.len()] }
    }

    /// Samples `f(x1, x2, x3)` at the nodes.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let data = (0..grid.len())
            .map(|i| {
                let (x1, x2, x3) = grid.coords(i);
                f(x1, x2, x3)
            })
            .collect();
        ScalarField { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        check_finite(&self.data, what)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        same_grid(&self.grid, &other.grid)?;
        Ok(ScalarField {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `a·self + b·other`.
    pub fn lincomb(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    /// Extends a horizontal (torus) field constantly across the layer of `target`.
    pub fn broadcast(&self, target: &Grid) -> Result<ScalarField> {
        if self.grid.horizontal() != target.horizontal() || self.grid.n3 != 1 {
            return Err(Error::Field("broadcast needs a matching horizontal field".into()));
        }
        let mut data = Vec::with_capacity(target.len());
        for _ in 0..target.n3 {
            data.extend_from_slice(&self.data);
        }
        Ok(ScalarField { grid: *target, data })
    }

    /// One horizontal layer as a torus field.
    pub fn layer(&self, k: usize) -> ScalarField {
        let l = self.grid.layer_len();
        ScalarField { grid: self.grid.horizontal(), data: self.data[k * l..(k + 1) * l].to_vec() }
    }

    /// Trapezoidal depth average, a torus field.
    pub fn depth_average(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.horizontal(),
            data: vertical::depth_average(&self.grid, &self.data),
        }
    }
}

impl VectorField {
    pub fn new(grid: Grid, comps: [Vec<f64>; 3]) -> Result<Self> {
        for c in &comps {
            if c.len() != grid.len() {
                return Err(Error::Field("vector component length mismatch".into()));
            }
            check_finite(c, "vector field")?;
        }
        Ok(VectorField { grid, comps })
    }

    pub(crate) fn from_vecs(grid: Grid, comps: [Vec<f64>; 3]) -> Self {
        VectorField { grid, comps }
    }

    pub fn from_scalars(a: ScalarField, b: ScalarField, c: ScalarField) -> Result<Self> {
        same_grid(&a.grid, &b.grid)?;
        same_grid(&a.grid, &c.grid)?;
        Ok(VectorField { grid: a.grid, comps: [a.data, b.data, c.data] })
    }

    pub fn zeros(grid: Grid) -> Self {
        VectorField { grid, comps: [vec![0.0; grid.len()], vec![0.0; grid.len()], vec![0.0; grid.len()]] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64, f64) -> [f64; 3]) -> Self {
        let mut comps = [vec![0.0; grid.len()], vec![0.0; grid.len()], vec![0.0; grid.len()]];
        for i in 0..grid.len() {
            let (x1, x2, x3) = grid.coords(i);
            let v = f(x1, x2, x3);
            for c in 0..3 {
                comps[c][i] = v[c];
            }
        }
        VectorField { grid, comps }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        &self.comps[c]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.comps[c]
    }

    pub fn component(&self, c: usize) -> ScalarField {
        ScalarField { grid: self.grid, data: self.comps[c].clone() }
    }

    pub fn comps(&self) -> &[Vec<f64>; 3] {
        &self.comps
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        self.comps.iter().try_for_each(|c| check_finite(c, what))
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest pointwise Euclidean norm.
    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| (0..3).map(|c| self.comps[c][i].powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn lincomb(&self, a: f64, other: &VectorField, b: f64) -> Result<VectorField> {
        same_grid(&self.grid, &other.grid)?;
        let mut out = self.clone();
        for c in 0..3 {
            for (o, y) in out.comps[c].iter_mut().zip(&other.comps[c]) {
                *o = a * *o + b * y;
            }
        }
        Ok(out)
    }

    pub fn broadcast(&self, target: &Grid) -> Result<VectorField> {
        let c = |i: usize| self.component(i).broadcast(target).map(|f| f.data);
        Ok(VectorField { grid: *target, comps: [c(0)?, c(1)?, c(2)?] })
    }
}

fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Field(format!("grid mismatch: {a:?} vs {b:?}")))
    }
}

// ---------------------------------------------------------------------------
// slice kernels

/// Spectral horizontal gradient `(∂1 f, ∂2 f)` from one forward transform.
pub(crate) fn grad_h_raw(grid: &Grid, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let spec = spectral::forward(grid, f);
    let mut s1 = spec.clone();
    let mut s2 = spec;
    let i = Complex64::new(0.0, 1.0);
    spectral::map_modes(grid, &mut s1, |m1, _, c| *c *= i * spectral::first_derivative_wavenumber(grid.n1, m1));
    let d1 = spectral::inverse(grid, s1);
    let d2 = if grid.n2 > 1 {
        spectral::map_modes(grid, &mut s2, |_, m2, c| *c *= i * spectral::first_derivative_wavenumber(grid.n2, m2));
        spectral::inverse(grid, s2)
    } else {
        vec![0.0; f.len()]
    };
    (d1, d2)
}

pub(crate) fn d1_raw(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let mut s = spectral::forward(grid, f);
    let i = Complex64::new(0.0, 1.0);
    spectral::map_modes(grid, &mut s, |m1, _, c| *c *= i * spectral::first_derivative_wavenumber(grid.n1, m1));
    spectral::inverse(grid, s)
}

/// Horizontal divergence `∂1 a + ∂2 b` with a single inverse transform.
pub(crate) fn div_h_raw(grid: &Grid, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut sa = spectral::forward(grid, a);
    let i = Complex64::new(0.0, 1.0);
    if grid.n2 > 1 {
        let sb = spectral::forward(grid, b);
        let (n1, n2) = (grid.n1, grid.n2);
        for (layer_a, layer_b) in sa.chunks_mut(n1 * n2).zip(sb.chunks(n1 * n2)) {
            for m2 in 0..n2 {
                let k2 = spectral::first_derivative_wavenumber(n2, m2);
                for m1 in 0..n1 {
                    let k1 = spectral::first_derivative_wavenumber(n1, m1);
                    let s = m1 + n1 * m2;
                    layer_a[s] = i * (layer_a[s] * k1 + layer_b[s] * k2);
                }
            }
        }
    } else {
        spectral::map_modes(grid, &mut sa, |m1, _, c| *c *= i * spectral::first_derivative_wavenumber(grid.n1, m1));
    }
    spectral::inverse(grid, sa)
}

pub(crate) fn lap_h_raw(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let mut s = spectral::forward(grid, f);
    spectral::map_modes(grid, &mut s, |m1, m2, c| {
        let k1 = spectral::wavenumber(grid.n1, m1);
        let k2 = if grid.n2 > 1 { spectral::wavenumber(grid.n2, m2) } else { 0.0 };
        *c *= -(k1 * k1 + k2 * k2);
    });
    spectral::inverse(grid, s)
}

/// 2/3-rule truncation of the horizontal spectrum, in place.
pub(crate) fn dealias_raw(grid: &Grid, f: &mut Vec<f64>) {
    if grid.n1 < 3 && grid.n2 < 3 {
        return;
    }
    let mut s = spectral::forward(grid, f);
    spectral::map_modes(grid, &mut s, |m1, m2, c| {
        if !spectral::kept(grid, m1, m2) {
            *c = Complex64::new(0.0, 0.0);
        }
    });
    *f = spectral::inverse(grid, s);
}

fn vertical_or_zero(grid: &Grid, f: &[f64], parity: Parity) -> Vec<f64> {
    if grid.geometry.is_strip() {
        vertical::d3(grid, f, parity)
    } else {
        vec![0.0; f.len()]
    }
}

// ---------------------------------------------------------------------------
// public operators

pub fn grad(f: &ScalarField) -> Result<VectorField> {
    f.check_finite("grad input")?;
    let g = f.grid;
    let (d1, d2) = grad_h_raw(&g, &f.data);
    let d3 = vertical_or_zero(&g, &f.data, Parity::Free);
    Ok(VectorField { grid: g, comps: [d1, d2, d3] })
}

pub fn div(v: &VectorField) -> Result<ScalarField> {
    v.check_finite("div input")?;
    let g = v.grid;
    let mut out = div_h_raw(&g, &v.comps[0], &v.comps[1]);
    let d3 = vertical_or_zero(&g, &v.comps[2], Parity::Free);
    out.iter_mut().zip(&d3).for_each(|(o, d)| *o += d);
    Ok(ScalarField { grid: g, data: out })
}

/// `curl v`; on `Strip2` fields are read as `x2`-independent.
pub fn curl(v: &VectorField) -> Result<VectorField> {
    v.check_finite("curl input")?;
    let g = v.grid;
    let [a, b, c] = &v.comps;
    let (_, a2) = grad_h_raw(&g, a);
    let (b1, _b2) = grad_h_raw(&g, b);
    let (c1, c2) = grad_h_raw(&g, c);
    let a3 = vertical_or_zero(&g, a, Parity::Free);
    let b3 = vertical_or_zero(&g, b, Parity::Free);
    let n = g.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        out[0][i] = c2[i] - b3[i];
        out[1][i] = a3[i] - c1[i];
        out[2][i] = b1[i] - a2[i];
    }
    Ok(VectorField { grid: g, comps: out })
}

pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    f.check_finite("laplacian input")?;
    let g = f.grid;
    let mut out = lap_h_raw(&g, &f.data);
    if g.geometry.is_strip() {
        let v = vertical::d33(&g, &f.data, Parity::Free);
        out.iter_mut().zip(&v).for_each(|(o, d)| *o += d);
    }
    Ok(ScalarField { grid: g, data: out })
}

/// Horizontal Laplacian only.
pub fn laplacian_h(f: &ScalarField) -> Result<ScalarField> {
    f.check_finite("laplacian input")?;
    Ok(ScalarField { grid: f.grid, data: lap_h_raw(&f.grid, &f.data) })
}

/// Projection of the horizontal part of `v` onto divergence-free fields,
/// layer by layer: `v − ∇Δ⁻¹ div v` in Fourier space. The vertical component
/// is passed through untouched.
pub fn leray_project(v: &VectorField) -> Result<VectorField> {
    v.check_finite("leray input")?;
    let g = v.grid;
    let mut s1 = spectral::forward(&g, &v.comps[0]);
    let mut s2 = spectral::forward(&g, &v.comps[1]);
    let (n1, n2) = (g.n1, g.n2);
    for (l1, l2) in s1.chunks_mut(n1 * n2).zip(s2.chunks_mut(n1 * n2)) {
        for m2 in 0..n2 {
            let k2 = spectral::first_derivative_wavenumber(n2, m2);
            for m1 in 0..n1 {
                let k1 = spectral::first_derivative_wavenumber(n1, m1);
                let s = m1 + n1 * m2;
                let kk = k1 * k1 + k2 * k2;
                if kk > 0.0 {
                    let proj = (l1[s] * k1 + l2[s] * k2) / kk;
                    l1[s] -= proj * k1;
                    l2[s] -= proj * k2;
                } else if k1 == 0.0 && k2 == 0.0 && (m1 != 0 || m2 != 0) {
                    // Nyquist slots carry no derivative information; drop
                    // them so the result is exactly solenoidal.
                    l1[s] = Complex64::new(0.0, 0.0);
                    l2[s] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
    Ok(VectorField {
        grid: g,
        comps: [spectral::inverse(&g, s1), spectral::inverse(&g, s2), v.comps[2].clone()],
    })
}

/// `curl B × B`, dealiased.
pub fn lorentz_force(b: &VectorField) -> Result<VectorField> {
    let j = curl(b)?;
    let n = b.grid.len();
    let [b1, b2, b3] = &b.comps;
    let [j1, j2, j3] = &j.comps;
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        out[0][i] = j2[i] * b3[i] - j3[i] * b2[i];
        out[1][i] = j3[i] * b1[i] - j1[i] * b3[i];
        out[2][i] = j1[i] * b2[i] - j2[i] * b1[i];
    }
    for c in out.iter_mut() {
        dealias_raw(&b.grid, c);
    }
    Ok(VectorField { grid: b.grid, comps: out })
}

/// Pointwise product with 2/3-rule truncation.
pub fn dealiased_product(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    let mut p = a.zip_map(b, |x, y| x * y)?;
    dealias_raw(&p.grid, &mut p.data);
    Ok(p)
}

/// Domain average `|Ω|⁻¹∫f`: exact horizontally, trapezoidal vertically.
pub fn mean(f: &ScalarField) -> f64 {
    let g = &f.grid;
    let col = vertical::depth_average(g, &f.data);
    col.iter().sum::<f64>() / g.layer_len() as f64
}

/// `|Ω|⁻¹∫ f²` (same quadrature as [`mean`]).
pub fn mean_square(f: &ScalarField) -> f64 {
    mean(&f.map(|v| v * v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFlux {
    pub value: f64,
    /// False on the torus, where there is no boundary and `value` is 0.
    pub has_boundary: bool,
}

/// `|Ω|⁻¹∮ ∂ₙf`, i.e. the horizontal average of `∂3f(1) − ∂3f(0)` with
/// one-sided second-order wall derivatives.
pub fn mean_laplacian_flux(f: &ScalarField) -> Result<BoundaryFlux> {
    f.check_finite("flux input")?;
    let g = &f.grid;
    if !g.geometry.is_strip() {
        return Ok(BoundaryFlux { value: 0.0, has_boundary: false });
    }
    let (l, n, h) = (g.layer_len(), g.n3, g.h3());
    let top = n - 1;
    let mut acc = 0.0;
    for c in 0..l {
        let v = |k: usize| f.data[c + l * k];
        let bottom = (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h);
        let upper = (3.0 * v(top) - 4.0 * v(top - 1) + v(top - 2)) / (2.0 * h);
        acc += upper - bottom;
    }
    Ok(BoundaryFlux { value: acc / l as f64, has_boundary: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn grad_of_constant_vanishes() {
        let g = Grid::strip3(8, 8, 9).unwrap();
        let v = grad(&ScalarField::constant(g, 3.7)).unwrap();
        assert!(v.max_abs() < 1e-13);
    }

    #[test]
    fn spectral_eigenfunctions() {
        let g = Grid::strip2(64, 5).unwrap();
        for k in 1..=(64 / 3) {
            let kf = k as f64;
            let f = ScalarField::from_fn(g, |x, _, _| (PI * kf * x).sin());
            let l = laplacian_h(&f).unwrap();
            for (a, b) in l.data().iter().zip(f.data()) {
                assert!((a + (PI * kf).powi(2) * b).abs() < 1e-10 * (PI * kf).powi(2));
            }
        }
    }

    #[test]
    fn div_curl_vanishes_on_strip() {
        let g = Grid::strip2(64, 65).unwrap();
        let v = VectorField::from_fn(g, |x, _, z| {
            [
                (PI * x).sin() * (2.0 * z).cos() + z * z,
                (2.0 * PI * x).cos() * (3.0 * z).sin(),
                (PI * x).cos() * z.exp(),
            ]
        });
        let d = div(&curl(&v).unwrap()).unwrap();
        assert!(d.max_abs() < 1e-8, "{}", d.max_abs());
    }

    #[test]
    fn flux_of_parabola() {
        let g = Grid::strip2(8, 17).unwrap();
        let f = ScalarField::from_fn(g, |_, _, z| z * z);
        let fl = mean_laplacian_flux(&f).unwrap();
        assert!(fl.has_boundary && (fl.value - 2.0).abs() < 1e-8);
        assert!((mean(&ScalarField::constant(g, 2.5)) - 2.5).abs() < 1e-15);
        let t = Grid::torus2(8, 8).unwrap();
        let fl = mean_laplacian_flux(&ScalarField::constant(t, 1.0)).unwrap();
        assert!(!fl.has_boundary && fl.value == 0.0);
    }

    #[test]
    fn mean_of_laplacian_matches_flux() {
        let g = Grid::strip2(64, 65).unwrap();
        let f = ScalarField::from_fn(g, |x, _, z| (PI * x).cos() * (2.3 * z).sin() + (1.7 * z).exp());
        let lhs = mean(&laplacian(&f).unwrap());
        let rhs = mean_laplacian_flux(&f).unwrap().value;
        assert!((lhs - rhs).abs() < 1e-6);
    }

    #[test]
    fn vertical_second_order() {
        let err = |n3: usize| {
            let g = Grid::strip2(4, n3).unwrap();
            let f = ScalarField::from_fn(g, |_, _, z| (PI * z).cos());
            let l = laplacian(&f).unwrap();
            l.data()
                .iter()
                .zip(f.data())
                .map(|(a, b)| (a + PI * PI * b).abs())
                .fold(0.0, f64::max)
        };
        for n in [17, 33, 65] {
            let ratio = err(n) / err(2 * n - 1);
            assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
        }
    }

    #[test]
    fn leray_kills_gradients() {
        let g = Grid::torus2(32, 32).unwrap();
        let phi = ScalarField::from_fn(g, |x, y, _| (PI * x).sin() * (2.0 * PI * y).cos() + (3.0 * PI * y).sin());
        let p = leray_project(&grad(&phi).unwrap()).unwrap();
        assert!(p.max_abs() < 1e-12);
    }

    #[test]
    fn lorentz_of_constant_field_is_zero() {
        let g = Grid::strip2(16, 9).unwrap();
        let b = VectorField::from_fn(g, |_, _, _| [0.0, 0.0, 1.3]);
        assert!(lorentz_force(&b).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn non_finite_rejected() {
        let g = Grid::strip2(4, 3).unwrap();
        let mut d = vec![0.0; g.len()];
        d[3] = f64::NAN;
        assert!(ScalarField::new(g, d).is_err());
    }
}
