//! Ground-truth simulators for the three chaotic test systems.
//!
//! Each system exposes a tendency function `du/dt = f(u)` over a flat state
//! vector. [`generate_trajectory`] integrates from a seeded initial condition,
//! subsamples onto the output grid and discards the spin-up transient.

mod brusselator;
mod integrate;
mod ks;
mod l96;

pub use brusselator::{derivative_brusselator, BrusselatorSpec};
pub use integrate::{step_euler, step_rk4, Integrator, Stepper};
pub use ks::{derivative_ks, KsSpec};
pub use l96::{derivative_l96, L96Spec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Series;

/// Any value with magnitude above this aborts integration.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemTag {
    Ks,
    Brusselator,
    L96,
}

impl SystemTag {
    pub fn code(self) -> u8 {
        match self {
            SystemTag::Ks => 0,
            SystemTag::Brusselator => 1,
            SystemTag::L96 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SystemTag::Ks),
            1 => Some(SystemTag::Brusselator),
            2 => Some(SystemTag::L96),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemTag::Ks => "ks",
            SystemTag::Brusselator => "brusselator",
            SystemTag::L96 => "l96",
        }
    }
}

impl std::fmt::Display for SystemTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SystemTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ks" => Ok(SystemTag::Ks),
            "brusselator" => Ok(SystemTag::Brusselator),
            "l96" => Ok(SystemTag::L96),
            other => Err(Error::invalid(format!("unknown system '{other}'"))),
        }
    }
}

/// How a flat state vector is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `grid_points` scalars on a periodic 1-D grid.
    Ks { grid_points: usize },
    /// Two `side × side` row-major fields, `u` then `v`.
    Brusselator { side: usize },
    /// `k` slow variables followed by `k·j` fast variables grouped by parent.
    L96 { k: usize, j: usize },
}

impl Layout {
    pub fn len(&self) -> usize {
        match *self {
            Layout::Ks { grid_points } => grid_points,
            Layout::Brusselator { side } => 2 * side * side,
            Layout::L96 { k, j } => k + k * j,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One of the three systems with all its physical and numerical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemSpec {
    Ks(KsSpec),
    Brusselator(BrusselatorSpec),
    L96(L96Spec),
}

impl SystemSpec {
    pub fn tag(&self) -> SystemTag {
        match self {
            SystemSpec::Ks(_) => SystemTag::Ks,
            SystemSpec::Brusselator(_) => SystemTag::Brusselator,
            SystemSpec::L96(_) => SystemTag::L96,
        }
    }

    pub fn layout(&self) -> Layout {
        match self {
            SystemSpec::Ks(s) => Layout::Ks {
                grid_points: s.grid_points,
            },
            SystemSpec::Brusselator(s) => Layout::Brusselator { side: s.side },
            SystemSpec::L96(s) => Layout::L96 { k: s.k, j: s.j },
        }
    }

    pub fn dim(&self) -> usize {
        self.layout().len()
    }

    fn timing(&self) -> (f64, f64, usize, Integrator) {
        match self {
            SystemSpec::Ks(s) => (s.dt_solver, s.subsample_dt, s.spinup_steps, s.integrator),
            SystemSpec::Brusselator(s) => {
                (s.dt_solver, s.subsample_dt, s.spinup_steps, s.integrator)
            }
            SystemSpec::L96(s) => (s.dt_solver, s.subsample_dt, s.spinup_steps, s.integrator),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SystemSpec::Ks(s) => s.validate(),
            SystemSpec::Brusselator(s) => s.validate(),
            SystemSpec::L96(s) => s.validate(),
        }?;
        self.stride().map(|_| ())
    }

    /// Solver steps per stored sample.
    pub fn stride(&self) -> Result<usize> {
        let (dt, sub, _, _) = self.timing();
        solver_stride(dt, sub)
    }

    /// Output interval between stored samples.
    pub fn sample_dt(&self) -> f64 {
        self.timing().1
    }

    /// Tendency without input validation; the hot path of the integrators.
    pub(crate) fn tendency(&self, state: &[f64], out: &mut [f64]) {
        match self {
            SystemSpec::Ks(s) => ks::tendency(s, state, out),
            SystemSpec::Brusselator(s) => brusselator::tendency(s, state, out),
            SystemSpec::L96(s) => l96::tendency(s, state, out),
        }
    }

    /// Checked tendency evaluation.
    pub fn derivative(&self, state: &[f64]) -> Result<Vec<f64>> {
        match self {
            SystemSpec::Ks(s) => derivative_ks(state, s),
            SystemSpec::Brusselator(s) => derivative_brusselator(state, s),
            SystemSpec::L96(s) => derivative_l96(state, s),
        }
    }

    /// Seeded initial condition: a small perturbation of a reference state.
    pub fn initial_condition(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            SystemSpec::Ks(s) => (0..s.grid_points)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
            SystemSpec::Brusselator(s) => {
                let n = s.side * s.side;
                let mut state = Vec::with_capacity(2 * n);
                state.extend((0..n).map(|_| s.a + rng.gen_range(-0.1..0.1)));
                state.extend((0..n).map(|_| s.b / s.a + rng.gen_range(-0.1..0.1)));
                state
            }
            SystemSpec::L96(s) => {
                let mut state = Vec::with_capacity(s.k + s.k * s.j);
                state.extend((0..s.k).map(|_| s.forcing + rng.gen_range(-1.0..1.0)));
                state.extend((0..s.k * s.j).map(|_| rng.gen_range(-0.1..0.1)));
                state
            }
        }
    }
}

pub(crate) fn solver_stride(dt_solver: f64, subsample_dt: f64) -> Result<usize> {
    if !(dt_solver > 0.0) || !(subsample_dt > 0.0) {
        return Err(Error::invalid("time steps must be positive"));
    }
    let ratio = subsample_dt / dt_solver;
    let stride = ratio.round();
    if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::invalid(format!(
            "subsample step {subsample_dt} is not an integer multiple of solver step {dt_solver}"
        )));
    }
    Ok(stride as usize)
}

pub(crate) fn check_finite(state: &[f64], what: &str) -> Result<()> {
    if state.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
        })
    }
}

/// A stored high-resolution trajectory on a uniform output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FineTrajectory {
    pub states: Series,
    pub dt: f64,
    pub layout: Layout,
}

impl FineTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Integrates `spec` from the initial condition drawn with `seed`.
///
/// A sample is stored every `subsample_dt / dt_solver` solver steps; the first
/// `spinup_steps` samples are dropped and exactly `n_samples` are returned.
pub fn generate_trajectory(
    spec: &SystemSpec,
    seed: u64,
    n_samples: usize,
) -> Result<FineTrajectory> {
    let initial = spec.initial_condition(seed);
    generate_from(spec, initial, n_samples)
}

/// As [`generate_trajectory`] but from an explicit initial state.
pub fn generate_from(
    spec: &SystemSpec,
    initial: Vec<f64>,
    n_samples: usize,
) -> Result<FineTrajectory> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    spec.validate()?;
    let layout = spec.layout();
    if initial.len() != layout.len() {
        return Err(Error::shape(format!(
            "initial state has {} values, layout needs {}",
            initial.len(),
            layout.len()
        )));
    }
    check_finite(&initial, "initial state")?;
    let (dt, sample_dt, spinup, integrator) = spec.timing();
    let stride = spec.stride()?;

    let mut stepper = Stepper::new(integrator, layout.len());
    let mut state = initial;
    let mut states = Series::zeros(0, layout.len());
    let mut step: u64 = 0;
    for sample in 0..spinup + n_samples {
        for _ in 0..stride {
            stepper.step_in_place(|u, du| spec.tendency(u, du), &mut state, dt);
            step += 1;
            if state.iter().any(|v| !(v.abs() <= BLOWUP_THRESHOLD)) {
                return Err(Error::BlowUp {
                    step,
                    threshold: BLOWUP_THRESHOLD,
                });
            }
        }
        if sample >= spinup {
            states.push_row(&state);
        }
    }
    Ok(FineTrajectory {
        states,
        dt: sample_dt,
        layout,
    })
}
