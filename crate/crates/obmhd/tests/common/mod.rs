//! Oracles shared by the integration tests.

use std::f64::consts::PI;

use obmhd::thermo::ReferenceCoefficients;

/// Fine-grid method-of-lines solution of the depth profile with the
/// non-local mean drift, RK4 in time; returns the depth mean at `t_end`.
pub fn mean_temperature_oracle(c: &ReferenceCoefficients, t_end: f64, n: usize) -> f64 {
    let h = 1.0 / (n - 1) as f64;
    let k = c.kappa / (c.rho_bar * c.cp);
    let lift = c.theta_bar * c.alpha * c.dp_dtheta / (c.rho_bar * c.cp);
    let drift_coef = c.kappa / (c.rho_bar * c.de_dtheta);
    let rhs = |v: &[f64]| -> Vec<f64> {
        // fourth-order one-sided wall derivatives for ⟨Δϑ⟩ = ϑ'(1) − ϑ'(0)
        let d0 = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h);
        let m = n - 1;
        let d1 = (25.0 * v[m] - 48.0 * v[m - 1] + 36.0 * v[m - 2] - 16.0 * v[m - 3] + 3.0 * v[m - 4]) / (12.0 * h);
        let drift = drift_coef * (d1 - d0);
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            out[i] = k * (v[i - 1] - 2.0 * v[i] + v[i + 1]) / (h * h) + lift * drift;
        }
        out
    };
    let mut v: Vec<f64> = (0..n).map(|i| (PI * i as f64 * h).sin()).collect();
    v[0] = 0.0;
    v[n - 1] = 0.0;
    let steps = (t_end / (0.5 * h * h / k)).ceil() as usize;
    let dt = t_end / steps as f64;
    let axpy = |a: &[f64], s: f64, b: &[f64]| a.iter().zip(b).map(|(x, y)| x + s * y).collect::<Vec<_>>();
    for _ in 0..steps {
        let k1 = rhs(&v);
        let k2 = rhs(&axpy(&v, 0.5 * dt, &k1));
        let k3 = rhs(&axpy(&v, 0.5 * dt, &k2));
        let k4 = rhs(&axpy(&v, dt, &k3));
        for i in 0..n {
            v[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    // Simpson
    let mut acc = v[0] + v[n - 1];
    for (i, x) in v.iter().enumerate().take(n - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * x } else { 2.0 * x };
    }
    acc * h / 3.0
}
