use serde::{Deserialize, Serialize};

use super::{check_finite, Integrator};
use crate::error::{Error, Result};

/// Two-tier Lorenz 96: `k` slow variables, each coupled to `j` fast ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct L96Spec {
    pub k: usize,
    pub j: usize,
    pub h: f64,
    pub b: f64,
    pub c: f64,
    pub forcing: f64,
    pub dt_solver: f64,
    pub subsample_dt: f64,
    pub spinup_steps: usize,
    pub integrator: Integrator,
}

impl Default for L96Spec {
    fn default() -> Self {
        Self {
            k: 8,
            j: 32,
            h: 1.0,
            b: 10.0,
            c: 10.0,
            forcing: 20.0,
            dt_solver: 0.001,
            subsample_dt: 0.005,
            spinup_steps: 10_000,
            integrator: Integrator::Rk4,
        }
    }
}

impl L96Spec {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(Error::invalid("L96 needs K >= 4"));
        }
        if self.j < 3 {
            return Err(Error::invalid("L96 needs J >= 3"));
        }
        if self.b == 0.0 {
            return Err(Error::invalid("L96 scale ratio b must be nonzero"));
        }
        Ok(())
    }
}

/// Slow and fast tendencies; the fast ring is cyclic over all `k·j` values.
///
/// The fast equation uses the coupling `-(h c / b) X_k`.
pub fn derivative_l96(state: &[f64], spec: &L96Spec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.k + spec.k * spec.j;
    if state.len() != n {
        return Err(Error::shape(format!(
            "L96 state has {} values, expected {n}",
            state.len()
        )));
    }
    check_finite(state, "L96 state")?;
    let mut out = vec![0.0; n];
    tendency(spec, state, &mut out);
    Ok(out)
}

pub(super) fn tendency(spec: &L96Spec, state: &[f64], out: &mut [f64]) {
    let (kk, jj) = (spec.k, spec.j);
    let (x, y) = state.split_at(kk);
    let (dx, dy) = out.split_at_mut(kk);
    let coupling = spec.h * spec.c / spec.b;
    for k in 0..kk {
        let xm2 = x[(k + kk - 2) % kk];
        let xm1 = x[(k + kk - 1) % kk];
        let xp1 = x[(k + 1) % kk];
        let fast_sum: f64 = y[k * jj..(k + 1) * jj].iter().sum();
        dx[k] = -xm1 * (xm2 - xp1) - x[k] + spec.forcing - coupling * fast_sum;
    }
    let ny = kk * jj;
    let cb = spec.c * spec.b;
    for n in 0..ny {
        let ym1 = y[(n + ny - 1) % ny];
        let yp1 = y[(n + 1) % ny];
        let yp2 = y[(n + 2) % ny];
        dy[n] = -cb * yp1 * (yp2 - ym1) - spec.c * y[n] - coupling * x[n / jj];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_forcing_survives_at_zero() {
        let spec = L96Spec::default();
        let d = derivative_l96(&vec![0.0; 8 + 256], &spec).unwrap();
        assert!(d[..8].iter().all(|&v| v == 20.0));
        assert!(d[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fast_coupling_sign() {
        let spec = L96Spec::default();
        let mut s = vec![1.0; 8];
        s.extend(vec![0.0; 256]);
        let d = derivative_l96(&s, &spec).unwrap();
        assert!(d[8..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn zero_coupling_decouples_tiers() {
        let spec = L96Spec {
            h: 0.0,
            k: 4,
            j: 3,
            ..Default::default()
        };
        let base: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut other_y = base.clone();
        for v in &mut other_y[4..] {
            *v += 3.0;
        }
        let mut other_x = base.clone();
        for v in &mut other_x[..4] {
            *v -= 2.0;
        }
        let d0 = derivative_l96(&base, &spec).unwrap();
        let dy = derivative_l96(&other_y, &spec).unwrap();
        let dx = derivative_l96(&other_x, &spec).unwrap();
        assert_eq!(d0[..4], dy[..4]);
        assert_eq!(d0[4..], dx[4..]);
    }

    #[test]
    fn validates_sizes() {
        let spec = L96Spec {
            k: 3,
            ..Default::default()
        };
        assert!(derivative_l96(&[0.0; 99], &spec).is_err());
    }
}
