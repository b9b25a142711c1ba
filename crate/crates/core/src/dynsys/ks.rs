use serde::{Deserialize, Serialize};

use super::{check_finite, Integrator};
use crate::error::{Error, Result};

/// Kuramoto-Sivashinsky on a periodic domain `[0, length)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KsSpec {
    pub nu: f64,
    pub length: f64,
    pub grid_points: usize,
    pub dt_solver: f64,
    pub subsample_dt: f64,
    pub spinup_steps: usize,
    pub integrator: Integrator,
}

impl Default for KsSpec {
    fn default() -> Self {
        Self {
            nu: 1.0,
            length: 22.0,
            grid_points: 100,
            dt_solver: 0.00005,
            subsample_dt: 0.002,
            spinup_steps: 10_000,
            integrator: Integrator::Euler,
        }
    }
}

impl KsSpec {
    pub fn dx(&self) -> f64 {
        self.length / self.grid_points as f64
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.grid_points < 4 {
            return Err(Error::invalid("KS needs at least 4 grid points"));
        }
        if !(self.length > 0.0) {
            return Err(Error::invalid("KS domain length must be positive"));
        }
        Ok(())
    }
}

/// `du/dt = -nu u_xxxx - u_xx - u u_x` with central periodic stencils.
pub fn derivative_ks(state: &[f64], spec: &KsSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if state.len() != spec.grid_points {
        return Err(Error::shape(format!(
            "KS state has {} values, grid has {}",
            state.len(),
            spec.grid_points
        )));
    }
    check_finite(state, "KS state")?;
    let mut out = vec![0.0; state.len()];
    tendency(spec, state, &mut out);
    Ok(out)
}

pub(super) fn tendency(spec: &KsSpec, u: &[f64], out: &mut [f64]) {
    let n = u.len();
    let dx = spec.dx();
    let inv_dx2 = 1.0 / (dx * dx);
    let inv_dx4 = inv_dx2 * inv_dx2;
    let inv_2dx = 0.5 / dx;
    for i in 0..n {
        let im2 = u[(i + n - 2) % n];
        let im1 = u[(i + n - 1) % n];
        let ui = u[i];
        let ip1 = u[(i + 1) % n];
        let ip2 = u[(i + 2) % n];
        let d1 = (ip1 - im1) * inv_2dx;
        let d2 = (ip1 - 2.0 * ui + im1) * inv_dx2;
        let d4 = (ip2 - 4.0 * ip1 + 6.0 * ui - 4.0 * im1 + im2) * inv_dx4;
        out[i] = -spec.nu * d4 - d2 - ui * d1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_state_has_zero_tendency() {
        let spec = KsSpec::default();
        let du = derivative_ks(&vec![3.0; 100], &spec).unwrap();
        assert!(du.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn advection_part_is_energy_neutral() {
        // sum_i u_i * (u_i * D u_i) is not zero, but sum_i u_i (D u)_i is.
        let spec = KsSpec::default();
        let u: Vec<f64> = (0..100)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3)
            .collect();
        let n = u.len();
        let dx = spec.dx();
        let s: f64 = (0..n)
            .map(|i| u[i] * (u[(i + 1) % n] - u[(i + n - 1) % n]) / (2.0 * dx))
            .sum();
        assert!(s.abs() < 1e-12, "{s}");
        // The full tendency conserves the discrete mean.
        let du = derivative_ks(&u, &spec).unwrap();
        assert!(du.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn sine_mode_matches_stencil_eigenvalues() {
        // Central stencils act on sin(kx) through their discrete symbols.
        let spec = KsSpec::default();
        let n = spec.grid_points;
        let dx = spec.dx();
        let k = 2.0 * PI / spec.length;
        let x: Vec<f64> = (0..n).map(|i| i as f64 * dx).collect();
        let u: Vec<f64> = x.iter().map(|&x| (k * x).sin()).collect();
        let s = (k * dx / 2.0).sin();
        let d1 = (k * dx).sin() / dx;
        let d2 = -4.0 * s * s / (dx * dx);
        let d4 = 16.0 * s.powi(4) / dx.powi(4);
        let du = derivative_ks(&u, &spec).unwrap();
        for i in 0..n {
            let (sn, cs) = (k * x[i]).sin_cos();
            let expected = -spec.nu * d4 * sn - d2 * sn - sn * d1 * cs;
            // The fourth difference amplifies rounding by 1/dx^4 ~ 400.
            assert!(
                (du[i] - expected).abs() < 1e-10,
                "i={i}: {} vs {expected}",
                du[i]
            );
        }
    }

    #[test]
    fn rejects_non_finite_and_wrong_length() {
        let spec = KsSpec::default();
        let mut u = vec![0.0; 100];
        u[3] = f64::NAN;
        assert!(derivative_ks(&u, &spec).is_err());
        assert!(derivative_ks(&[0.0; 99], &spec).is_err());
    }
}
