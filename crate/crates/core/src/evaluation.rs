//! Hold-out likelihood statistics and ensemble forecast verification.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{Dropout, EmulatorModel, RolloutConfig};
use crate::series::Series;
use crate::training::stream_rng;

/// Normal 97.5% quantile used for the confidence half-width.
pub const Z_95: f64 = 1.96;

/// Mean per-step log-likelihood of a standardized hold-out sequence, teacher
/// forced from a zero hidden state.
pub fn holdout_loglik(model: &EmulatorModel, x: &Series) -> Result<f64> {
    Ok(-model.nll_lowres(x, Dropout::Off)?)
}

/// Same quantity evaluated in chunks of `chunk` transitions with the hidden
/// state carried across chunk boundaries.
pub fn holdout_loglik_chunked(model: &EmulatorModel, x: &Series, chunk: usize) -> Result<f64> {
    if chunk == 0 {
        return Err(Error::invalid("chunk length must be positive"));
    }
    if x.len() < 2 {
        return Err(Error::invalid("hold-out needs at least 2 steps"));
    }
    let mut h: Option<Vec<f64>> = None;
    let (mut total, mut count) = (0.0, 0usize);
    let mut start = 0;
    while start + 1 < x.len() {
        let end = (start + chunk + 1).min(x.len());
        let (s, n, h_end) = model.nll_lowres_carry(&x.slice(start, end), h.as_deref())?;
        total += s;
        count += n;
        h = Some(h_end);
        start = end - 1;
    }
    Ok(-total / count as f64)
}

/// Mean and `1.96 · s / √n` half-width, `s` the sample standard deviation.
pub fn confidence_interval_95(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::invalid(
            "a confidence interval needs at least 2 values",
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok((mean, Z_95 * sample_std(values) / n.sqrt()))
}

pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    /// Number of initial conditions.
    pub m: usize,
    /// Ensemble members per initial condition.
    pub n: usize,
    pub n_steps: usize,
    /// Teacher-forced steps used to spin up each member's hidden state.
    pub warmup: usize,
    pub seed: u64,
}

/// `M` start indices into a sequence of length `len`, each with `warmup`
/// preceding rows and `n_steps` following rows available.
pub fn select_initial_conditions(len: usize, cfg: &ForecastConfig) -> Result<Vec<usize>> {
    let lo = cfg.warmup;
    if len < lo + cfg.n_steps + 1 {
        return Err(Error::invalid(format!(
            "sequence of {len} steps cannot host warm-up {} plus {} forecast steps",
            cfg.warmup, cfg.n_steps
        )));
    }
    let span = len - cfg.n_steps - lo;
    if cfg.m > span {
        return Err(Error::invalid(format!(
            "only {span} distinct initial conditions available, {} requested",
            cfg.m
        )));
    }
    let mut rng = stream_rng(cfg.seed, 0);
    Ok(sample(&mut rng, span, cfg.m)
        .into_iter()
        .map(|i| i + lo)
        .collect())
}

/// Raw forecasts, indexed `[m][n][t][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub m: usize,
    pub n: usize,
    pub steps: usize,
    pub d: usize,
    pub data: Vec<f64>,
    /// Members that stayed finite for the whole horizon.
    pub valid: Vec<bool>,
}

impl Ensemble {
    pub fn new(m: usize, n: usize, steps: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * n * steps * d {
            return Err(Error::shape(format!(
                "ensemble buffer of {} values for {m}x{n}x{steps}x{d}",
                data.len()
            )));
        }
        Ok(Self {
            m,
            n,
            steps,
            d,
            data,
            valid: vec![true; m * n],
        })
    }

    pub fn member(&self, m: usize, n: usize) -> &[f64] {
        let len = self.steps * self.d;
        let start = (m * self.n + n) * len;
        &self.data[start..start + len]
    }

    pub fn excluded(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    fn value(&self, m: usize, n: usize, t: usize, i: usize) -> f64 {
        self.data[((m * self.n + n) * self.steps + t) * self.d + i]
    }

    /// Ensemble mean over valid members, `[t][i]`, or `None` if every member
    /// of this initial condition was excluded. Accumulated as deviations from
    /// the first member so identical members give that member back exactly.
    fn mean(&self, m: usize) -> Option<Vec<f64>> {
        let members: Vec<usize> = (0..self.n)
            .filter(|&n| self.valid[m * self.n + n])
            .collect();
        let (&first, rest) = members.split_first()?;
        let base = self.member(m, first);
        let mut dev = vec![0.0; self.steps * self.d];
        for &n in rest {
            for ((o, v), b) in dev.iter_mut().zip(self.member(m, n)).zip(base) {
                *o += v - b;
            }
        }
        let inv = 1.0 / members.len() as f64;
        Some(base.iter().zip(&dev).map(|(b, d)| b + d * inv).collect())
    }
}

/// Observed trajectories `[m][t][i]` following each initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub m: usize,
    pub steps: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Truth {
    pub fn from_series(x: &Series, inits: &[usize], steps: usize) -> Result<Self> {
        let d = x.dim();
        let mut data = Vec::with_capacity(inits.len() * steps * d);
        for &i in inits {
            if i + steps >= x.len() {
                return Err(Error::invalid(format!(
                    "initial condition {i} leaves fewer than {steps} truth steps"
                )));
            }
            for t in 1..=steps {
                data.extend_from_slice(x.row(i + t));
            }
        }
        Ok(Self {
            m: inits.len(),
            steps,
            d,
            data,
        })
    }
}

/// `M × N` noise-on rollouts from the given start indices of a physical-unit
/// sequence. Member `(m, n)` draws from noise stream `m·N + n`.
pub fn forecast_ensemble(
    model: &EmulatorModel,
    x_phys: &Series,
    inits: &[usize],
    cfg: &ForecastConfig,
    noise_on: bool,
) -> Result<Ensemble> {
    if cfg.n == 0 || cfg.n_steps == 0 {
        return Err(Error::invalid("ensemble size and horizon must be positive"));
    }
    let stdz = model
        .standardizer
        .as_ref()
        .map(|s| s.x.clone())
        .unwrap_or_else(|| crate::coarsegrain::Standardizer::identity(x_phys.dim()));
    let d = model.arch.d;
    let warm: Vec<Vec<f64>> = inits
        .iter()
        .map(|&i| {
            if i < cfg.warmup || i >= x_phys.len() {
                return Err(Error::invalid(format!(
                    "initial condition {i} has no room for warm-up"
                )));
            }
            let seg = stdz.apply(&x_phys.slice(i - cfg.warmup, i))?;
            model.warm_up(&seg, None)
        })
        .collect::<Result<_>>()?;
    let members: Vec<(Vec<f64>, bool)> = (0..inits.len() * cfg.n)
        .into_par_iter()
        .map(|k| {
            let (m, n) = (k / cfg.n, k % cfg.n);
            let rc = RolloutConfig {
                n_steps: cfg.n_steps,
                noise_on,
                seed: cfg.seed,
                stream: (m * cfg.n + n) as u64,
            };
            let r = model.rollout(x_phys.row(inits[m]), &warm[m], &rc)?;
            let mut states = r.states.into_vec();
            let ok = !r.diverged;
            states.resize(cfg.n_steps * d, f64::NAN);
            Ok((states, ok))
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(members.len() * cfg.n_steps * d);
    let mut valid = Vec::with_capacity(members.len());
    for (states, ok) in members {
        data.extend(states);
        valid.push(ok);
    }
    let mut ens = Ensemble::new(inits.len(), cfg.n, cfg.n_steps, d, data)?;
    ens.valid = valid;
    Ok(ens)
}

/// RMS distance between ensemble mean and truth per lead time.
pub fn forecast_error(ens: &Ensemble, truth: &Truth) -> Result<Vec<f64>> {
    if truth.m != ens.m || truth.steps != ens.steps || truth.d != ens.d {
        return Err(Error::shape(format!(
            "truth {}x{}x{} does not match ensemble {}x{}x{}",
            truth.m, truth.steps, truth.d, ens.m, ens.steps, ens.d
        )));
    }
    let mut sums = vec![0.0; ens.steps];
    let mut used = 0usize;
    for m in 0..ens.m {
        let Some(mean) = ens.mean(m) else { continue };
        used += 1;
        let obs = &truth.data[m * ens.steps * ens.d..(m + 1) * ens.steps * ens.d];
        for t in 0..ens.steps {
            for i in 0..ens.d {
                let k = t * ens.d + i;
                sums[t] += (obs[k] - mean[k]).powi(2);
            }
        }
    }
    let norm = (used * ens.d) as f64;
    Ok(sums.into_iter().map(|s| (s / norm).sqrt()).collect())
}

/// RMS deviation of members about their ensemble mean per lead time.
pub fn forecast_spread(ens: &Ensemble) -> Vec<f64> {
    let mut sums = vec![0.0; ens.steps];
    let mut members = 0usize;
    for m in 0..ens.m {
        let Some(mean) = ens.mean(m) else { continue };
        for n in 0..ens.n {
            if !ens.valid[m * ens.n + n] {
                continue;
            }
            members += 1;
            for t in 0..ens.steps {
                for i in 0..ens.d {
                    sums[t] += (ens.value(m, n, t, i) - mean[t * ens.d + i]).powi(2);
                }
            }
        }
    }
    let norm = (members * ens.d) as f64;
    sums.into_iter().map(|s| (s / norm).sqrt()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSummary {
    /// Coarse steps `1..=steps`.
    pub lead_times: Vec<usize>,
    pub error: Vec<f64>,
    pub spread: Vec<f64>,
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub excluded: usize,
}

pub fn summarize_forecast(ens: &Ensemble, truth: &Truth) -> Result<ForecastSummary> {
    Ok(ForecastSummary {
        lead_times: (1..=ens.steps).collect(),
        error: forecast_error(ens, truth)?,
        spread: forecast_spread(ens),
        m: ens.m,
        n: ens.n,
        d: ens.d,
        excluded: ens.excluded(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indicator {
    pub value: f64,
    /// Set when the value is at most 1: transfer is likely to help less.
    pub less_beneficial: bool,
}

/// `n_params^0.1 · d^0.5 · 10⁴ / train_len^1.5`.
pub fn tl_benefit_indicator(n_params: usize, d: usize, train_len: usize) -> Result<Indicator> {
    if n_params == 0 || d == 0 || train_len == 0 {
        return Err(Error::invalid("indicator inputs must all be at least 1"));
    }
    let value =
        (n_params as f64).powf(0.1) * (d as f64).sqrt() * 1e4 / (train_len as f64).powf(1.5);
    Ok(Indicator {
        value,
        less_beneficial: value <= 1.0,
    })
}

/// Validation and hold-out scores of one trained instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub val_ll: f64,
    pub holdout_ll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub scores: Vec<SeedScore>,
    /// Index into `scores` of the greatest validation log-likelihood.
    pub max_index: usize,
    /// Hold-out log-likelihood of that instance.
    pub max_holdout: f64,
    pub average: f64,
    pub half_width: f64,
    pub std: f64,
}

impl SweepSummary {
    pub fn from_scores(scores: Vec<SeedScore>) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::invalid(format!(
                "a sweep summary needs at least 2 seeds, got {}",
                scores.len()
            )));
        }
        let mut max_index = 0;
        for (i, s) in scores.iter().enumerate() {
            if s.val_ll > scores[max_index].val_ll {
                max_index = i;
            }
        }
        let holdouts: Vec<f64> = scores.iter().map(|s| s.holdout_ll).collect();
        let (average, half_width) = confidence_interval_95(&holdouts)?;
        Ok(Self {
            max_index,
            max_holdout: scores[max_index].holdout_ll,
            average,
            half_width,
            std: sample_std(&holdouts),
            scores,
        })
    }
}

pub const SUMMARY_HEADER: &str =
    "system,tl_max,tl_average,tl_ci95,baseline_max,baseline_average,baseline_ci95";

/// Per-mode summaries and one row in the `SUMMARY_HEADER` layout.
pub fn summarize_sweep(
    system: &str,
    tl: Vec<SeedScore>,
    baseline: Vec<SeedScore>,
) -> Result<(SweepSummary, SweepSummary, String)> {
    let tl = SweepSummary::from_scores(tl)?;
    let bl = SweepSummary::from_scores(baseline)?;
    let row = format!(
        "{system},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        tl.max_holdout, tl.average, tl.half_width, bl.max_holdout, bl.average, bl.half_width
    );
    Ok((tl, bl, row))
}
