//! Horizontal Fourier transforms, layer by layer.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::Grid;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform(grid: &Grid, buf: &mut [Complex64], inverse: bool) {
    let (n1, n2) = (grid.n1, grid.n2);
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if n1 > 1 {
            let f = if inverse { p.plan_fft_inverse(n1) } else { p.plan_fft_forward(n1) };
            f.process(buf);
        }
        if n2 > 1 {
            let f = if inverse { p.plan_fft_inverse(n2) } else { p.plan_fft_forward(n2) };
            let mut col = vec![Complex64::new(0.0, 0.0); n2];
            for layer in buf.chunks_mut(n1 * n2) {
                for i in 0..n1 {
                    for j in 0..n2 {
                        col[j] = layer[i + n1 * j];
                    }
                    f.process(&mut col);
                    for j in 0..n2 {
                        layer[i + n1 * j] = col[j];
                    }
                }
            }
        }
    });
}

/// Forward transform of every horizontal layer.
pub fn forward(grid: &Grid, data: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(grid, &mut buf, false);
    buf
}

/// Inverse transform (normalised), keeping the real part.
pub fn inverse(grid: &Grid, mut buf: Vec<Complex64>) -> Vec<f64> {
    transform(grid, &mut buf, true);
    let scale = 1.0 / grid.layer_len() as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Signed mode index of FFT slot `m` for length `n`.
#[inline]
pub fn signed_mode(n: usize, m: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Wavenumber `πm` (period 2).
#[inline]
pub fn wavenumber(n: usize, m: usize) -> f64 {
    PI * signed_mode(n, m) as f64
}

/// Wavenumber used for first derivatives: the Nyquist mode is dropped so
/// that derivatives of real fields stay real.
#[inline]
pub fn first_derivative_wavenumber(n: usize, m: usize) -> f64 {
    if n > 1 && n % 2 == 0 && m == n / 2 {
        0.0
    } else {
        wavenumber(n, m)
    }
}

/// Whether slot `(m1, m2)` survives the 2/3 rule.
#[inline]
pub fn kept(grid: &Grid, m1: usize, m2: usize) -> bool {
    let c1 = Grid::dealias_cutoff(grid.n1) as i64;
    let c2 = Grid::dealias_cutoff(grid.n2) as i64;
    signed_mode(grid.n1, m1).abs() <= c1 && signed_mode(grid.n2, m2).abs() <= c2
}

/// Applies `f(k1, k2, slot)` to every coefficient of every layer.
pub fn map_modes<F>(grid: &Grid, spec: &mut [Complex64], mut f: F)
where
    F: FnMut(usize, usize, &mut Complex64),
{
    let (n1, n2) = (grid.n1, grid.n2);
    for layer in spec.chunks_mut(n1 * n2) {
        for m2 in 0..n2 {
            for m1 in 0..n1 {
                f(m1, m2, &mut layer[m1 + n1 * m2]);
            }
        }
    }
}
