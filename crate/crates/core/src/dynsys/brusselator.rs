use serde::{Deserialize, Serialize};

use super::{check_finite, Integrator};
use crate::error::{Error, Result};

/// Two-species Brusselator on a periodic `side × side` unit grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrusselatorSpec {
    pub d0: f64,
    pub d1: f64,
    pub a: f64,
    pub b: f64,
    pub side: usize,
    pub dt_solver: f64,
    pub subsample_dt: f64,
    pub spinup_steps: usize,
    pub integrator: Integrator,
}

impl Default for BrusselatorSpec {
    fn default() -> Self {
        Self {
            d0: 1.0,
            d1: 0.1,
            a: 1.0,
            b: 3.0,
            side: 64,
            dt_solver: 0.0002,
            subsample_dt: 0.002,
            spinup_steps: 10_000,
            integrator: Integrator::Euler,
        }
    }
}

impl BrusselatorSpec {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0 && self.d1 > 0.0) {
            return Err(Error::invalid("Brusselator diffusivities must be positive"));
        }
        if self.side < 3 {
            return Err(Error::invalid("Brusselator grid side must be at least 3"));
        }
        if self.a == 0.0 {
            return Err(Error::invalid("Brusselator rate a must be nonzero"));
        }
        Ok(())
    }
}

/// Reaction-diffusion tendency for the `[u, v]` field pair.
pub fn derivative_brusselator(state: &[f64], spec: &BrusselatorSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let cells = spec.side * spec.side;
    if state.len() != 2 * cells {
        return Err(Error::shape(format!(
            "Brusselator state has {} values, expected {}",
            state.len(),
            2 * cells
        )));
    }
    check_finite(state, "Brusselator state")?;
    let mut out = vec![0.0; state.len()];
    tendency(spec, state, &mut out);
    Ok(out)
}

#[inline]
fn laplacian(f: &[f64], n: usize, row: usize, col: usize) -> f64 {
    let up = if row == 0 { n - 1 } else { row - 1 };
    let down = if row + 1 == n { 0 } else { row + 1 };
    let left = if col == 0 { n - 1 } else { col - 1 };
    let right = if col + 1 == n { 0 } else { col + 1 };
    f[up * n + col] + f[down * n + col] + f[row * n + left] + f[row * n + right]
        - 4.0 * f[row * n + col]
}

pub(super) fn tendency(spec: &BrusselatorSpec, state: &[f64], out: &mut [f64]) {
    let n = spec.side;
    let cells = n * n;
    let (u, v) = state.split_at(cells);
    let (du, dv) = out.split_at_mut(cells);
    for row in 0..n {
        for col in 0..n {
            let idx = row * n + col;
            let (ui, vi) = (u[idx], v[idx]);
            let uuv = ui * ui * vi;
            du[idx] = spec.d0 * laplacian(u, n, row, col) + spec.a - (1.0 + spec.b) * ui + uuv;
            dv[idx] = spec.d1 * laplacian(v, n, row, col) + spec.b * ui - uuv;
        }
    }
}
