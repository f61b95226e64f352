//! Vertical finite differences on the vertex-centred wall-to-wall grid.
//!
//! Interior rows are second-order centred. Wall rows depend on the boundary
//! behaviour declared through [`Parity`]:
//!
//! * `Free` — no boundary condition: one-sided second-order first derivative;
//!   the second derivative uses the summation-by-parts row `(f0-2f1+f2)/h²`,
//!   whose trapezoidal integral telescopes exactly onto the one-sided wall
//!   fluxes.
//! * `Even` — mirror ghost node (`∂3 f = 0` at the wall).
//! * `Odd` — antisymmetric ghost node about the wall value (used for fields
//!   and fluxes that vanish on the wall). The resulting first-derivative row
//!   is `(f1-f0)/h`, so `∫ ∂3 F = F(1) − F(0)` holds exactly under the
//!   trapezoidal rule.

use super::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Free,
    Even,
    Odd,
}

/// First vertical derivative.
pub fn d3(grid: &Grid, f: &[f64], parity: Parity) -> Vec<f64> {
    let (l, n, h) = (grid.layer_len(), grid.n3, grid.h3());
    let mut out = vec![0.0; f.len()];
    if n < 3 {
        return out;
    }
    let inv2h = 0.5 / h;
    for k in 1..n - 1 {
        for c in 0..l {
            out[c + l * k] = (f[c + l * (k + 1)] - f[c + l * (k - 1)]) * inv2h;
        }
    }
    let top = n - 1;
    for c in 0..l {
        let v = |k: usize| f[c + l * k];
        let (b, t) = match parity {
            Parity::Free => (
                (-3.0 * v(0) + 4.0 * v(1) - v(2)) * inv2h,
                (3.0 * v(top) - 4.0 * v(top - 1) + v(top - 2)) * inv2h,
            ),
            Parity::Even => (0.0, 0.0),
            Parity::Odd => ((v(1) - v(0)) / h, (v(top) - v(top - 1)) / h),
        };
        out[c] = b;
        out[c + l * top] = t;
    }
    out
}

/// Second vertical derivative.
pub fn d33(grid: &Grid, f: &[f64], parity: Parity) -> Vec<f64> {
    let (l, n, h) = (grid.layer_len(), grid.n3, grid.h3());
    let mut out = vec![0.0; f.len()];
    if n < 3 {
        return out;
    }
    let ih2 = 1.0 / (h * h);
    for k in 1..n - 1 {
        for c in 0..l {
            out[c + l * k] = (f[c + l * (k + 1)] - 2.0 * f[c + l * k] + f[c + l * (k - 1)]) * ih2;
        }
    }
    let top = n - 1;
    for c in 0..l {
        let v = |k: usize| f[c + l * k];
        let (b, t) = match parity {
            Parity::Free => (
                (v(0) - 2.0 * v(1) + v(2)) * ih2,
                (v(top) - 2.0 * v(top - 1) + v(top - 2)) * ih2,
            ),
            Parity::Even => (2.0 * (v(1) - v(0)) * ih2, 2.0 * (v(top - 1) - v(top)) * ih2),
            Parity::Odd => (0.0, 0.0),
        };
        out[c] = b;
        out[c + l * top] = t;
    }
    out
}

/// Compact conservative `∂3(a ∂3 f)` with midpoint-averaged coefficient.
pub fn d3_flux(grid: &Grid, a: &[f64], f: &[f64], parity: Parity) -> Vec<f64> {
    let (l, n, h) = (grid.layer_len(), grid.n3, grid.h3());
    let mut out = vec![0.0; f.len()];
    if n < 3 {
        return out;
    }
    let ih2 = 1.0 / (h * h);
    for k in 1..n - 1 {
        for c in 0..l {
            let (m, z, p) = (c + l * (k - 1), c + l * k, c + l * (k + 1));
            let ap = 0.5 * (a[z] + a[p]);
            let am = 0.5 * (a[z] + a[m]);
            out[z] = (ap * (f[p] - f[z]) - am * (f[z] - f[m])) * ih2;
        }
    }
    let top = n - 1;
    for c in 0..l {
        let (b, t) = match parity {
            Parity::Free => (out[c + l], out[c + l * (top - 1)]),
            Parity::Even => {
                let ab = 0.5 * (a[c] + a[c + l]);
                let at = 0.5 * (a[c + l * top] + a[c + l * (top - 1)]);
                (
                    2.0 * ab * (f[c + l] - f[c]) * ih2,
                    2.0 * at * (f[c + l * (top - 1)] - f[c + l * top]) * ih2,
                )
            }
            Parity::Odd => (0.0, 0.0),
        };
        out[c] = b;
        out[c + l * top] = t;
    }
    out
}

/// Trapezoidal vertical average of each column (one value per layer point).
pub fn depth_average(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let l = grid.layer_len();
    let w = grid.vertical_weights();
    let mut out = vec![0.0; l];
    for (k, wk) in w.iter().enumerate() {
        for c in 0..l {
            out[c] += wk * f[c + l * k];
        }
    }
    out
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored. Coefficients are real, the right side generic.
pub fn solve_tridiagonal<T>(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [T])
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = upper[0] / beta;
    rhs[0] = rhs[0] * (1.0 / beta);
    for i in 1..n {
        beta = diag[i] - lower[i] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / beta;
        }
        rhs[i] = (rhs[i] - rhs[i - 1] * lower[i]) * (1.0 / beta);
    }
    for i in (0..n - 1).rev() {
        rhs[i] = rhs[i] - rhs[i + 1] * c[i];
    }
}
