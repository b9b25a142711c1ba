use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

/// Fixed-step integrator with preallocated stage buffers.
pub struct Stepper {
    kind: Integrator,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Stepper {
    pub fn new(kind: Integrator, dim: usize) -> Self {
        let stages = match kind {
            Integrator::Euler => 0,
            Integrator::Rk4 => dim,
        };
        Self {
            kind,
            k1: vec![0.0; dim],
            k2: vec![0.0; stages],
            k3: vec![0.0; stages],
            k4: vec![0.0; stages],
            tmp: vec![0.0; stages],
        }
    }

    /// Advances `state` by `dt` without checking intermediate values.
    pub fn step_in_place<F>(&mut self, mut f: F, state: &mut [f64], dt: f64)
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        match self.kind {
            Integrator::Euler => {
                f(state, &mut self.k1);
                for (s, k) in state.iter_mut().zip(&self.k1) {
                    *s += dt * k;
                }
            }
            Integrator::Rk4 => {
                let _ = self.rk4(&mut f, state, dt, false);
            }
        }
    }

    fn rk4<F>(&mut self, f: &mut F, state: &mut [f64], dt: f64, checked: bool) -> Result<()>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let half = 0.5 * dt;
        let check = |stage: u8, k: &[f64]| -> Result<()> {
            if checked && !k.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteStage { stage });
            }
            Ok(())
        };
        f(state, &mut self.k1);
        check(1, &self.k1)?;
        for i in 0..state.len() {
            self.tmp[i] = state[i] + half * self.k1[i];
        }
        f(&self.tmp, &mut self.k2);
        check(2, &self.k2)?;
        for i in 0..state.len() {
            self.tmp[i] = state[i] + half * self.k2[i];
        }
        f(&self.tmp, &mut self.k3);
        check(3, &self.k3)?;
        for i in 0..state.len() {
            self.tmp[i] = state[i] + dt * self.k3[i];
        }
        f(&self.tmp, &mut self.k4);
        check(4, &self.k4)?;
        let sixth = dt / 6.0;
        for i in 0..state.len() {
            state[i] += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "time step must be positive, got {dt}"
        )))
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn step_rk4<F>(mut deriv: F, state: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    check_dt(dt)?;
    let mut stepper = Stepper::new(Integrator::Rk4, state.len());
    let mut next = state.to_vec();
    stepper.rk4(&mut deriv, &mut next, dt, true)?;
    Ok(next)
}

/// One explicit Euler step.
pub fn step_euler<F>(mut deriv: F, state: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    check_dt(dt)?;
    let mut k = vec![0.0; state.len()];
    deriv(state, &mut k);
    if !k.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteStage { stage: 1 });
    }
    Ok(state.iter().zip(&k).map(|(s, k)| s + dt * k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(u: &[f64], du: &mut [f64]) {
        for (d, x) in du.iter_mut().zip(u) {
            *d = -x;
        }
    }

    #[test]
    fn rk4_exponential_decay() {
        // 1 - h + h^2/2 - h^3/6 + h^4/24 at h = 0.1
        let next = step_rk4(decay, &[1.0], 0.1).unwrap();
        assert!((next[0] - 0.904_837_5).abs() < 1e-12, "{}", next[0]);
    }

    #[test]
    fn euler_exponential_decay() {
        let next = step_euler(decay, &[1.0], 0.1).unwrap();
        assert!((next[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let zero = |_: &[f64], du: &mut [f64]| du.fill(0.0);
        let s = [1.5, -2.0, 0.25];
        assert_eq!(step_rk4(zero, &s, 0.3).unwrap(), s);
        assert_eq!(step_euler(zero, &s, 0.3).unwrap(), s);
    }

    #[test]
    fn constant_field_advances_linearly() {
        let c = |_: &[f64], du: &mut [f64]| du.fill(0.5);
        let next = step_rk4(c, &[1.0], 0.25).unwrap();
        assert_eq!(next[0], 1.0 + 0.5 * 0.25);
    }

    #[test]
    fn reports_failing_stage() {
        // Finite at the start, infinite once the state is perturbed.
        let f = |u: &[f64], du: &mut [f64]| {
            du[0] = if u[0] == 1.0 { 1.0 } else { f64::INFINITY };
        };
        match step_rk4(f, &[1.0], 0.1) {
            Err(Error::NonFiniteStage { stage }) => assert_eq!(stage, 2),
            other => panic!("{other:?}"),
        }
        assert!(step_rk4(decay, &[1.0], 0.0).is_err());
        assert!(step_euler(decay, &[1.0], -1.0).is_err());
    }
}
