//! Two-phase transfer learning, the X-only baseline, early stopping and
//! multi-seed sweeps.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarsegrain::PairedDataset;
use crate::dynsys::SystemTag;
use crate::error::{Error, Result};
use crate::neuralnet::{adam_update, Adam};
use crate::seqmodel::{
    sample_window_masks, Architecture, Dropout, EmulatorModel, Group, Tape, Target,
};
use crate::series::Series;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// High-resolution pre-training, then frozen-trunk fine-tuning.
    Tl,
    /// Low-resolution training only.
    Baseline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Tl => "tl",
            Mode::Baseline => "baseline",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Mode::Tl => 0,
            Mode::Baseline => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Mode::Tl),
            1 => Some(Mode::Baseline),
            _ => None,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tl" => Ok(Mode::Tl),
            "baseline" => Ok(Mode::Baseline),
            other => Err(Error::invalid(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub tbptt_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub n_seeds: usize,
}

impl TrainPlan {
    pub fn for_system(system: SystemTag) -> Self {
        let (phase2_epochs, lr) = match system {
            SystemTag::Ks => (200, 0.001),
            SystemTag::Brusselator => (400, 0.0003),
            SystemTag::L96 => (250, 0.001),
        };
        Self {
            phase1_epochs: 20,
            phase2_epochs,
            tbptt_len: 100,
            batch_size: 32,
            lr,
            patience: 25,
            n_seeds: 15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("phase1_epochs", self.phase1_epochs),
            ("phase2_epochs", self.phase2_epochs),
            ("tbptt_len", self.tbptt_len),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("n_seeds", self.n_seeds),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// High-resolution pre-training.
    Pretrain,
    /// Low-resolution training (TL fine-tuning or the baseline).
    Lowres,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Lowres => "lowres",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_nll: f64,
    pub val_ll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub phase: Phase,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub wall_clock: Duration,
}

impl TrainLog {
    pub fn best_val_ll(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_ll
    }
}

/// Both phases of one training run; `pretrain` is `None` for the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub mode: Mode,
    pub seed: u64,
    pub pretrain: Option<TrainLog>,
    pub lowres: TrainLog,
}

/// Window start offsets for one epoch, shuffled and grouped into batches.
///
/// Windows start at `0, L, 2L, ...` and each spans `L + 1` states so that `L`
/// transitions are scored.
pub fn make_windows<R: Rng + ?Sized>(
    len: usize,
    tbptt_len: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if tbptt_len == 0 || batch_size == 0 {
        return Err(Error::invalid(
            "window length and batch size must be positive",
        ));
    }
    if len < tbptt_len + 1 {
        return Err(Error::invalid(format!(
            "training split of {len} steps is shorter than one window of {}",
            tbptt_len + 1
        )));
    }
    let mut offsets: Vec<usize> = (0..)
        .map(|k| k * tbptt_len)
        .take_while(|&o| o + tbptt_len < len)
        .collect();
    offsets.shuffle(rng);
    Ok(offsets.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Tracks the best validation score and the patience counter.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    seen: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            seen: 0,
        }
    }

    pub fn observe(&mut self, val_ll: f64) -> StopDecision {
        self.seen += 1;
        match self.best {
            Some((_, b)) if !(val_ll > b) => {
                if self.seen - self.best_epoch() >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((self.seen, val_ll));
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best.map_or(0, |(e, _)| e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStop {
    /// 1-based argmax of the validation log-likelihood (first on ties).
    pub best_epoch: usize,
    /// 1-based epoch after which training halts.
    pub stop_epoch: usize,
}

/// Replays the early-stopping rule over a logged validation curve.
pub fn early_stop_select(val_lls: &[f64], patience: usize) -> Result<EarlyStop> {
    if val_lls.is_empty() {
        return Err(Error::invalid("early stopping needs at least one epoch"));
    }
    let mut s = EarlyStopper::new(patience);
    for (i, &v) in val_lls.iter().enumerate() {
        if s.observe(v) == StopDecision::Stop {
            return Ok(EarlyStop {
                best_epoch: s.best_epoch(),
                stop_epoch: i + 1,
            });
        }
    }
    Ok(EarlyStop {
        best_epoch: s.best_epoch(),
        stop_epoch: val_lls.len(),
    })
}

/// Standardized training inputs for one objective.
struct Objective {
    target: Target,
    train_x: Series,
    train_y: Option<Series>,
    val_x: Series,
    val_y: Option<Series>,
}

impl Objective {
    fn lowres(train: &PairedDataset, val: &PairedDataset) -> Result<Self> {
        Ok(Self {
            target: Target::LowRes,
            train_x: train.x_standardized()?,
            train_y: None,
            val_x: val.x_standardized()?,
            val_y: None,
        })
    }

    fn highres(train: &PairedDataset, val: &PairedDataset) -> Result<Self> {
        Ok(Self {
            target: Target::HighRes,
            train_x: train.x_standardized()?,
            train_y: Some(train.y_standardized()?),
            val_x: val.x_standardized()?,
            val_y: Some(val.y_standardized()?),
        })
    }

    fn validation_ll(&self, model: &EmulatorModel) -> Result<f64> {
        let nll = match self.target {
            Target::LowRes => model.nll_lowres(&self.val_x, Dropout::Off)?,
            Target::HighRes => {
                model.nll_highres(&self.val_x, self.val_y.as_ref().unwrap(), Dropout::Off)?
            }
        };
        Ok(-nll)
    }
}

/// Runs up to `epochs` epochs of Adam on `obj`. With `patience`, stops early
/// and restores the best-validation parameters.
#[allow(clippy::too_many_arguments)]
fn run_epochs(
    model: &mut EmulatorModel,
    obj: &Objective,
    plan: &TrainPlan,
    phase: Phase,
    epochs: usize,
    patience: Option<usize>,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<TrainLog> {
    let started = Instant::now();
    let opt = Adam::new(plan.lr);
    model.store.reset_optimizer();
    let mut stopper = EarlyStopper::new(patience.unwrap_or(usize::MAX));
    let mut best_store = model.store.clone();
    let mut records = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let batches = make_windows(obj.train_x.len(), plan.tbptt_len, plan.batch_size, rng)?;
        let mut loss_sum = 0.0;
        let mut windows = 0usize;
        for batch in &batches {
            let mut grads = model.store.zero_grads();
            for &off in batch {
                let end = off + plan.tbptt_len + 1;
                let x = obj.train_x.slice(off, end);
                let y = obj.train_y.as_ref().map(|y| y.slice(off, end));
                let masks = sample_window_masks(x.len(), &model.arch, rng);
                let mut tape = Tape::new();
                let loss = model
                    .forward(
                        &mut tape,
                        obj.target,
                        &x,
                        y.as_ref(),
                        Dropout::Fixed(&masks),
                    )
                    .map_err(|_| Error::Diverged {
                        epoch,
                        loss: f64::NAN,
                    })?;
                grads.add_assign(&tape.backward(model)?);
                loss_sum += loss;
                windows += 1;
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
            adam_update(&mut model.store, &grads, &opt);
        }
        let train_nll = loss_sum / windows as f64;
        let val_ll = obj.validation_ll(model).map_err(|_| Error::Diverged {
            epoch,
            loss: train_nll,
        })?;
        if !train_nll.is_finite() || !val_ll.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_nll,
            });
        }
        records.push(EpochRecord {
            epoch,
            train_nll,
            val_ll,
        });
        match stopper.observe(val_ll) {
            StopDecision::Improved => {
                if patience.is_some() {
                    best_store = model.store.clone();
                }
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let best_epoch = match patience {
        Some(_) => {
            model.store.copy_values_from(&best_store);
            stopper.best_epoch()
        }
        None => records.len(),
    };
    Ok(TrainLog {
        phase,
        seed,
        epochs: records,
        best_epoch,
        wall_clock: started.elapsed(),
    })
}

/// Independent generator streams of one training instance.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 0;
const STREAM_PRETRAIN: u64 = 1;
const STREAM_LOWRES: u64 = 2;

/// Fresh model for instance `seed`; TL and baseline runs with the same seed
/// start from identical parameters.
pub fn init_model(arch: Architecture, seed: u64, train: &PairedDataset) -> Result<EmulatorModel> {
    let mut rng = stream_rng(seed, STREAM_INIT);
    let mut model = EmulatorModel::init(arch, &mut rng)?;
    model.standardizer = train.standardizer.clone();
    Ok(model)
}

/// Phase 1: fixed-length training of trunk and high-resolution head on Y.
pub fn train_phase1_highres(
    model: &mut EmulatorModel,
    train: &PairedDataset,
    val: &PairedDataset,
    plan: &TrainPlan,
    seed: u64,
) -> Result<TrainLog> {
    plan.validate()?;
    model.set_trainable_groups(&Group::ALL);
    let obj = Objective::highres(train, val)?;
    let mut rng = stream_rng(seed, STREAM_PRETRAIN);
    run_epochs(
        model,
        &obj,
        plan,
        Phase::Pretrain,
        plan.phase1_epochs,
        None,
        seed,
        &mut rng,
    )
}

/// Freezes the shared trunk; only the low-resolution head and its noise
/// scale stay trainable.
pub fn freeze_shared(model: &mut EmulatorModel) {
    model.set_trainable_groups(&[Group::HeadX, Group::LogSigma]);
}

pub fn unfreeze_all(model: &mut EmulatorModel) {
    model.set_trainable_groups(&Group::ALL);
}

fn lowres_phase(
    model: &mut EmulatorModel,
    train: &PairedDataset,
    val: &PairedDataset,
    plan: &TrainPlan,
    seed: u64,
) -> Result<TrainLog> {
    let obj = Objective::lowres(train, val)?;
    let mut rng = stream_rng(seed, STREAM_LOWRES);
    run_epochs(
        model,
        &obj,
        plan,
        Phase::Lowres,
        plan.phase2_epochs,
        Some(plan.patience),
        seed,
        &mut rng,
    )
}

/// Phase 2: early-stopped fine-tuning of the low-resolution head.
pub fn train_phase2_lowres(
    model: &mut EmulatorModel,
    train: &PairedDataset,
    val: &PairedDataset,
    plan: &TrainPlan,
    seed: u64,
) -> Result<TrainLog> {
    plan.validate()?;
    let mut groups = model.trainable_groups();
    groups.sort_by_key(|g| *g as u8);
    if groups != [Group::HeadX, Group::LogSigma] {
        return Err(Error::invalid(format!(
            "phase 2 requires a frozen trunk; trainable groups are {groups:?}"
        )));
    }
    lowres_phase(model, train, val, plan, seed)
}

/// No-transfer baseline: trunk and low-resolution head trained on X only.
pub fn train_baseline(
    model: &mut EmulatorModel,
    train: &PairedDataset,
    val: &PairedDataset,
    plan: &TrainPlan,
    seed: u64,
) -> Result<TrainLog> {
    plan.validate()?;
    model.set_trainable_groups(&[Group::Gru, Group::HeadX, Group::LogSigma]);
    lowres_phase(model, train, val, plan, seed)
}

/// One full training instance in `mode`.
pub fn train_instance(
    mode: Mode,
    arch: Architecture,
    seed: u64,
    train: &PairedDataset,
    val: &PairedDataset,
    plan: &TrainPlan,
) -> Result<(EmulatorModel, RunLog)> {
    let mut model = init_model(arch, seed, train)?;
    let (pretrain, lowres) = match mode {
        Mode::Tl => {
            let p1 = train_phase1_highres(&mut model, train, val, plan, seed)?;
            freeze_shared(&mut model);
            let p2 = train_phase2_lowres(&mut model, train, val, plan, seed)?;
            (Some(p1), p2)
        }
        Mode::Baseline => (None, train_baseline(&mut model, train, val, plan, seed)?),
    };
    Ok((
        model,
        RunLog {
            mode,
            seed,
            pretrain,
            lowres,
        },
    ))
}

/// Seed of sweep instance `index`.
pub fn instance_seed(master: u64, index: usize) -> u64 {
    master ^ index as u64
}

#[derive(Debug)]
pub struct SweepRun {
    pub index: usize,
    pub seed: u64,
    pub outcome: std::result::Result<(EmulatorModel, RunLog), String>,
}

/// Trains `plan.n_seeds` independent instances in parallel. A diverged
/// instance is recorded and does not stop the others.
pub fn seed_sweep(
    mode: Mode,
    arch: Architecture,
    master_seed: u64,
    train: &PairedDataset,
    val: &PairedDataset,
    plan: &TrainPlan,
) -> Result<Vec<SweepRun>> {
    plan.validate()?;
    Ok((0..plan.n_seeds)
        .into_par_iter()
        .map(|index| {
            let seed = instance_seed(master_seed, index);
            let outcome =
                train_instance(mode, arch, seed, train, val, plan).map_err(|e| e.to_string());
            SweepRun {
                index,
                seed,
                outcome,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_windows(201, 100, 32, &mut rng).unwrap();
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, vec![0, 100]);
        assert!(make_windows(100, 100, 32, &mut rng).is_err());
        let b = make_windows(1001, 10, 32, &mut rng).unwrap();
        assert_eq!(
            b.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![32, 32, 32, 4]
        );
    }

    #[test]
    fn window_shuffle_is_deterministic() {
        let a = make_windows(5000, 100, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = make_windows(5000, 100, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_stopping_examples() {
        assert_eq!(
            early_stop_select(&[1.0, 2.0, 3.0], 25).unwrap().best_epoch,
            3
        );
        let s = early_stop_select(&[1.0, 3.0, 2.0, 2.0, 2.0], 2).unwrap();
        assert_eq!(
            s,
            EarlyStop {
                best_epoch: 2,
                stop_epoch: 4
            }
        );
        assert_eq!(early_stop_select(&[2.0, 2.0], 5).unwrap().best_epoch, 1);
        assert!(early_stop_select(&[], 3).is_err());
    }

    #[test]
    fn plan_defaults() {
        let p = TrainPlan::for_system(SystemTag::Brusselator);
        assert_eq!((p.phase1_epochs, p.phase2_epochs, p.lr), (20, 400, 0.0003));
        assert_eq!(
            (p.tbptt_len, p.batch_size, p.n_seeds, p.patience),
            (100, 32, 15, 25)
        );
        assert_eq!(TrainPlan::for_system(SystemTag::Ks).phase2_epochs, 200);
        assert_eq!(TrainPlan::for_system(SystemTag::L96).phase2_epochs, 250);
        let bad = TrainPlan { batch_size: 0, ..p };
        assert!(bad.validate().is_err());
    }
}
