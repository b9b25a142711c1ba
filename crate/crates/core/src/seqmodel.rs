//! The probabilistic emulator: a shared GRU trunk feeding a low-resolution
//! head (increments of X) and a high-resolution head (increments of Y).
//!
//! ```text
//! h[t+1] = gru(h[t], X[t])
//! X[t+1] = X[t] + head_x(h[t+1]) + sigma * z
//! Y[t+1] = Y[t] + head_y(h[t+1]) + rho   * w
//! ```
//!
//! All likelihoods are computed on standardized data.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarsegrain::PairStandardizer;
use crate::error::{Error, Result};
use crate::neuralnet::{
    finite_diff_check, gaussian_nll_backward, Activation, Dense, DenseCache, DropoutMask,
    GradCheckReport, Grads, GruCache, GruCell, ParamId, ParamStore, Tensor,
};
use crate::series::Series;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Low-resolution width.
    pub d: usize,
    /// Refinement factor; the high-resolution width is `d * m`.
    pub m: usize,
    pub hidden: usize,
    pub head_x_width: usize,
    pub head_y_width: usize,
    pub dropout: f64,
}

impl Architecture {
    pub fn dm(&self) -> usize {
        self.d * self.m
    }
}

/// Parameter groups that can be frozen together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Gru,
    HeadX,
    HeadY,
    LogSigma,
    LogRho,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Gru,
        Group::HeadX,
        Group::HeadY,
        Group::LogSigma,
        Group::LogRho,
    ];

    pub fn of(name: &str) -> Option<Group> {
        if name.starts_with("gru.") {
            Some(Group::Gru)
        } else if name.starts_with("head_x.") {
            Some(Group::HeadX)
        } else if name.starts_with("head_y.") {
            Some(Group::HeadY)
        } else if name == "log_sigma" {
            Some(Group::LogSigma)
        } else if name == "log_rho" {
            Some(Group::LogRho)
        } else {
            None
        }
    }
}

/// Which likelihood a pass scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    LowRes,
    HighRes,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Head {
    hidden: Dense,
    out: Dense,
}

impl Head {
    fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        width: usize,
        out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Dense::init(
                store,
                &format!("{prefix}.hidden"),
                input,
                width,
                Activation::Tanh,
                rng,
            )?,
            out: Dense::init(
                store,
                &format!("{prefix}.out"),
                width,
                out,
                Activation::Identity,
                rng,
            )?,
        })
    }

    fn bind(
        store: &ParamStore,
        prefix: &str,
        input: usize,
        width: usize,
        out: usize,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Dense::bind(
                store,
                &format!("{prefix}.hidden"),
                input,
                width,
                Activation::Tanh,
            )?,
            out: Dense::bind(
                store,
                &format!("{prefix}.out"),
                width,
                out,
                Activation::Identity,
            )?,
        })
    }

    fn forward(&self, store: &ParamStore, h: &[f64]) -> Vec<f64> {
        let (a, _) = self.hidden.step(store, h);
        self.out.step(store, &a).0
    }
}

/// Where dropout masks come from during a teacher-forced pass.
pub enum Dropout<'a> {
    /// Evaluation mode: no dropout.
    Off,
    /// Training mode: fresh masks drawn from the generator.
    Sample(&'a mut dyn RngCore),
    /// Training mode with pre-drawn masks, one per scored transition.
    Fixed(&'a [DropoutMask]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub n_steps: usize,
    pub noise_on: bool,
    pub seed: u64,
    /// Independent noise stream under the same seed.
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Physical-unit states `X[1..=n]`, truncated at the first non-finite one.
    pub states: Series,
    pub diverged: bool,
}

struct StepTrace {
    gru: GruCache,
    mask: Option<DropoutMask>,
    head_hidden: DenseCache,
    head_out: DenseCache,
    residual: Vec<f64>,
}

struct WindowTrace {
    target: Target,
    steps: Vec<StepTrace>,
    log_scale: f64,
}

/// Records one teacher-forced pass for the reverse sweep.
#[derive(Default)]
pub struct Tape {
    trace: Option<WindowTrace>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.trace.is_some()
    }

    /// Exact gradients of the recorded mean per-step NLL for every tensor.
    pub fn backward(&self, model: &EmulatorModel) -> Result<Grads> {
        let trace = self.trace.as_ref().ok_or(Error::NoForwardPass)?;
        Ok(model.backward(trace))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorModel {
    pub arch: Architecture,
    pub store: ParamStore,
    pub standardizer: Option<PairStandardizer>,
    gru: GruCell,
    head_x: Head,
    head_y: Head,
    log_sigma: ParamId,
    log_rho: ParamId,
}

impl EmulatorModel {
    /// Fresh model. Initialization order is trunk, low-res head, high-res
    /// head, so two models with the same seed share every initial tensor.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(arch, &mut rng)
    }

    pub fn init<R: Rng>(arch: Architecture, rng: &mut R) -> Result<Self> {
        validate_arch(&arch)?;
        let mut store = ParamStore::new();
        let gru = GruCell::init(&mut store, "gru", arch.d, arch.hidden, rng)?;
        let head_x = Head::init(
            &mut store,
            "head_x",
            arch.hidden,
            arch.head_x_width,
            arch.d,
            rng,
        )?;
        let head_y = Head::init(
            &mut store,
            "head_y",
            arch.hidden,
            arch.head_y_width,
            arch.dm(),
            rng,
        )?;
        let log_sigma = store.add("log_sigma", Tensor::scalar(0.0))?;
        let log_rho = store.add("log_rho", Tensor::scalar(0.0))?;
        Ok(Self {
            arch,
            store,
            standardizer: None,
            gru,
            head_x,
            head_y,
            log_sigma,
            log_rho,
        })
    }

    /// Rebuilds a model around an existing parameter store.
    pub fn from_store(
        arch: Architecture,
        store: ParamStore,
        standardizer: Option<PairStandardizer>,
    ) -> Result<Self> {
        validate_arch(&arch)?;
        let gru = GruCell::bind(&store, "gru", arch.d, arch.hidden)?;
        let head_x = Head::bind(&store, "head_x", arch.hidden, arch.head_x_width, arch.d)?;
        let head_y = Head::bind(&store, "head_y", arch.hidden, arch.head_y_width, arch.dm())?;
        let scalar = |name: &str| {
            store
                .id(name)
                .filter(|&id| store.get(id).len() == 1)
                .ok_or_else(|| Error::shape(format!("missing scalar '{name}'")))
        };
        let log_sigma = scalar("log_sigma")?;
        let log_rho = scalar("log_rho")?;
        Ok(Self {
            arch,
            gru,
            head_x,
            head_y,
            log_sigma,
            log_rho,
            store,
            standardizer,
        })
    }

    pub fn gru(&self) -> &GruCell {
        &self.gru
    }

    pub fn log_sigma(&self) -> f64 {
        self.store.data(self.log_sigma)[0]
    }

    pub fn log_rho(&self) -> f64 {
        self.store.data(self.log_rho)[0]
    }

    pub fn log_sigma_id(&self) -> ParamId {
        self.log_sigma
    }

    pub fn log_rho_id(&self) -> ParamId {
        self.log_rho
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn group_ids(&self, group: Group) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| Group::of(&self.store.param(id).name) == Some(group))
            .collect()
    }

    /// Marks exactly `groups` trainable.
    pub fn set_trainable_groups(&mut self, groups: &[Group]) {
        for id in self.store.ids().collect::<Vec<_>>() {
            let g = Group::of(&self.store.param(id).name);
            let on = g.is_some_and(|g| groups.contains(&g));
            self.store.set_trainable(id, on);
        }
    }

    pub fn trainable_groups(&self) -> Vec<Group> {
        Group::ALL
            .into_iter()
            .filter(|&g| {
                let ids = self.group_ids(g);
                !ids.is_empty() && ids.iter().all(|&id| self.store.param(id).trainable)
            })
            .collect()
    }

    /// Copies of every tensor in `group`, for bitwise comparisons.
    pub fn snapshot(&self, group: Group) -> Vec<Tensor> {
        self.group_ids(group)
            .into_iter()
            .map(|id| self.store.get(id).clone())
            .collect()
    }

    /// SHA-256 over tensor names and the bit patterns of their values.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in self.store.params() {
            h.update(p.name.as_bytes());
            for v in &p.value.data {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    fn check_input(&self, x: &Series) -> Result<()> {
        if x.dim() != self.arch.d {
            return Err(Error::shape(format!(
                "X has width {}, model expects {}",
                x.dim(),
                self.arch.d
            )));
        }
        Ok(())
    }

    /// Hidden states `h[1..=T]` driven by `x` alone.
    pub fn encode_sequence(&self, x: &Series, h0: Option<&[f64]>) -> Result<Series> {
        self.check_input(x)?;
        let mut h = self.initial_hidden(h0)?;
        let mut out = Series::zeros(0, self.arch.hidden);
        for row in x.rows() {
            h = self.gru.step(&self.store, &h, row).0;
            out.push_row(&h);
        }
        Ok(out)
    }

    fn initial_hidden(&self, h0: Option<&[f64]>) -> Result<Vec<f64>> {
        match h0 {
            None => Ok(vec![0.0; self.arch.hidden]),
            Some(h) if h.len() == self.arch.hidden => Ok(h.to_vec()),
            Some(h) => Err(Error::shape(format!(
                "h0 has width {}, expected {}",
                h.len(),
                self.arch.hidden
            ))),
        }
    }

    /// Mean per-step NLL of `x` under the low-resolution model.
    pub fn nll_lowres(&self, x: &Series, dropout: Dropout<'_>) -> Result<f64> {
        let mut tape = Tape::new();
        self.forward(&mut tape, Target::LowRes, x, None, dropout)
    }

    /// Mean per-step NLL of `y` under the high-resolution model, with the
    /// trunk driven by `x`.
    pub fn nll_highres(&self, x: &Series, y: &Series, dropout: Dropout<'_>) -> Result<f64> {
        let mut tape = Tape::new();
        self.forward(&mut tape, Target::HighRes, x, Some(y), dropout)
    }

    /// Teacher-forced pass that records everything needed by
    /// [`Tape::backward`]. Returns the mean per-step NLL.
    pub fn forward(
        &self,
        tape: &mut Tape,
        target: Target,
        x: &Series,
        y: Option<&Series>,
        mut dropout: Dropout<'_>,
    ) -> Result<f64> {
        self.check_input(x)?;
        let t_len = x.len();
        if t_len < 2 {
            return Err(Error::invalid(
                "a likelihood pass needs at least 2 time steps",
            ));
        }
        let (seq, head, log_scale) = match target {
            Target::LowRes => (x, &self.head_x, self.log_sigma()),
            Target::HighRes => {
                let y = y.ok_or_else(|| Error::invalid("high-resolution pass needs Y"))?;
                if y.len() != t_len {
                    return Err(Error::shape(format!(
                        "X has {t_len} steps but Y has {}",
                        y.len()
                    )));
                }
                if y.dim() != self.arch.dm() {
                    return Err(Error::shape(format!(
                        "Y has width {}, model expects {}",
                        y.dim(),
                        self.arch.dm()
                    )));
                }
                (y, &self.head_y, self.log_rho())
            }
        };
        if let Dropout::Fixed(masks) = &dropout {
            if masks.len() != t_len - 1 {
                return Err(Error::shape(format!(
                    "{} dropout masks for {} transitions",
                    masks.len(),
                    t_len - 1
                )));
            }
        }
        let hd = self.arch.hidden;
        let mut h = vec![0.0; hd];
        let mut steps = Vec::with_capacity(t_len - 1);
        let mut total = 0.0;
        for t in 0..t_len - 1 {
            let (h_next, gru_cache) = self.gru.step(&self.store, &h, x.row(t));
            let mask = match &mut dropout {
                Dropout::Off => None,
                Dropout::Sample(rng) => {
                    Some(DropoutMask::sample(hd, self.arch.dropout, &mut **rng))
                }
                Dropout::Fixed(masks) => Some(masks[t].clone()),
            };
            let head_in = match &mask {
                Some(m) => m.apply(&h_next),
                None => h_next.clone(),
            };
            let (a, head_hidden) = head.hidden.step(&self.store, &head_in);
            let (inc, head_out) = head.out.step(&self.store, &a);
            let (cur, next) = (seq.row(t), seq.row(t + 1));
            let residual: Vec<f64> = (0..seq.dim()).map(|i| next[i] - cur[i] - inc[i]).collect();
            total += crate::neuralnet::gaussian_nll(&residual, log_scale)?;
            steps.push(StepTrace {
                gru: gru_cache,
                mask,
                head_hidden,
                head_out,
                residual,
            });
            h = h_next;
        }
        let loss = total / (t_len - 1) as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "likelihood".into(),
            });
        }
        tape.trace = Some(WindowTrace {
            target,
            steps,
            log_scale,
        });
        Ok(loss)
    }

    fn backward(&self, trace: &WindowTrace) -> Grads {
        let mut grads = self.store.zero_grads();
        let (head, scale_id) = match trace.target {
            Target::LowRes => (&self.head_x, self.log_sigma),
            Target::HighRes => (&self.head_y, self.log_rho),
        };
        let upstream = 1.0 / trace.steps.len() as f64;
        let mut dh_carry = vec![0.0; self.arch.hidden];
        let mut d_scale = 0.0;
        for step in trace.steps.iter().rev() {
            let mut d_res = vec![0.0; step.residual.len()];
            d_scale += gaussian_nll_backward(&step.residual, trace.log_scale, upstream, &mut d_res);
            // residual = next - cur - increment
            d_res.iter_mut().for_each(|g| *g = -*g);
            let d_a = head
                .out
                .backward(&self.store, &step.head_out, &d_res, &mut grads);
            let mut dh = head
                .hidden
                .backward(&self.store, &step.head_hidden, &d_a, &mut grads);
            if let Some(mask) = &step.mask {
                dh = mask.apply(&dh);
            }
            for (a, b) in dh.iter_mut().zip(&dh_carry) {
                *a += b;
            }
            dh_carry = self.gru.backward(&self.store, &step.gru, &dh, &mut grads);
        }
        grads.get_mut(scale_id)[0] += d_scale;
        grads
    }

    /// Sum of per-step NLLs of `x` starting from `h0`, the number of scored
    /// transitions, and the hidden state after consuming every row but the
    /// last. Chaining calls over chunks that overlap by one row reproduces a
    /// single pass exactly.
    pub fn nll_lowres_carry(
        &self,
        x: &Series,
        h0: Option<&[f64]>,
    ) -> Result<(f64, usize, Vec<f64>)> {
        self.check_input(x)?;
        let mut h = self.initial_hidden(h0)?;
        let head = &self.head_x;
        let log_sigma = self.log_sigma();
        let mut total = 0.0;
        let n = x.len().saturating_sub(1);
        let mut residual = vec![0.0; self.arch.d];
        for t in 0..n {
            h = self.gru.step(&self.store, &h, x.row(t)).0;
            let inc = head.forward(&self.store, &h);
            let (cur, next) = (x.row(t), x.row(t + 1));
            for i in 0..self.arch.d {
                residual[i] = next[i] - cur[i] - inc[i];
            }
            total += crate::neuralnet::gaussian_nll(&residual, log_sigma)?;
        }
        Ok((total, n, h))
    }

    /// Hidden state after teacher-forcing every row of `x` (standardized).
    pub fn warm_up(&self, x: &Series, h0: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = self.initial_hidden(h0)?;
        for row in x.rows() {
            h = self.gru.step(&self.store, &h, row).0;
        }
        Ok(h)
    }

    /// Free-running simulation of X from the physical state `x0`, where `h0`
    /// is the hidden state ready to consume `x0`. Never evaluates the
    /// high-resolution head.
    pub fn rollout(&self, x0: &[f64], h0: &[f64], cfg: &RolloutConfig) -> Result<Rollout> {
        let d = self.arch.d;
        if x0.len() != d {
            return Err(Error::shape(format!(
                "x0 has width {}, expected {d}",
                x0.len()
            )));
        }
        if cfg.n_steps == 0 {
            return Err(Error::invalid("rollout needs at least one step"));
        }
        let mut h = self.initial_hidden(Some(h0))?;
        let stdz = self.standardizer.as_ref().map(|s| &s.x);
        let mut x = vec![0.0; d];
        match stdz {
            Some(s) => s.apply_row(x0, &mut x),
            None => x.copy_from_slice(x0),
        }
        let sigma = self.log_sigma().exp();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.stream);
        let mut states = Series::zeros(0, d);
        let mut phys = vec![0.0; d];
        for _ in 0..cfg.n_steps {
            h = self.gru.step(&self.store, &h, &x).0;
            let inc = self.head_x.forward(&self.store, &h);
            for i in 0..d {
                let noise = if cfg.noise_on {
                    sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                x[i] += inc[i] + noise;
            }
            match stdz {
                Some(s) => s.invert_row(&x, &mut phys),
                None => phys.copy_from_slice(&x),
            }
            if !phys.iter().all(|v| v.is_finite()) {
                return Ok(Rollout {
                    states,
                    diverged: true,
                });
            }
            states.push_row(&phys);
        }
        Ok(Rollout {
            states,
            diverged: false,
        })
    }
}

fn validate_arch(arch: &Architecture) -> Result<()> {
    if arch.d == 0
        || arch.m == 0
        || arch.hidden == 0
        || arch.head_x_width == 0
        || arch.head_y_width == 0
    {
        return Err(Error::invalid(format!(
            "architecture sizes must be positive: {arch:?}"
        )));
    }
    if !(0.0..1.0).contains(&arch.dropout) {
        return Err(Error::invalid(format!(
            "dropout {} outside [0, 1)",
            arch.dropout
        )));
    }
    Ok(())
}

/// Compares [`Tape::backward`] with central differences of the same pass
/// over every parameter, frozen or not. `masks` fixes dropout so the loss is
/// deterministic.
pub fn gradient_check(
    model: &EmulatorModel,
    target: Target,
    x: &Series,
    y: Option<&Series>,
    masks: Option<&[DropoutMask]>,
    step: f64,
) -> Result<GradCheckReport> {
    fn dropout(m: Option<&[DropoutMask]>) -> Dropout<'_> {
        m.map_or(Dropout::Off, Dropout::Fixed)
    }
    let mut tape = Tape::new();
    model.forward(&mut tape, target, x, y, dropout(masks))?;
    let analytic = tape.backward(model)?;
    let mut failure = None;
    let report = finite_diff_check(&model.store, &analytic, step, |store| {
        let probe =
            EmulatorModel::from_store(model.arch, store.clone(), None).expect("same layout");
        let mut t = Tape::new();
        probe
            .forward(&mut t, target, x, y, dropout(masks))
            .unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Pre-draws one mask per scored transition of a window with `states` rows.
pub fn sample_window_masks<R: Rng + ?Sized>(
    states: usize,
    arch: &Architecture,
    rng: &mut R,
) -> Vec<DropoutMask> {
    (0..states.saturating_sub(1))
        .map(|_| DropoutMask::sample(arch.hidden, arch.dropout, rng))
        .collect()
}
