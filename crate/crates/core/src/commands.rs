//! End-to-end pipeline stages behind the command-line tool.
//!
//! Every stage reads and writes under `cfg.out_dir`:
//!
//! ```text
//! config.toml
//! data/{train,val,holdout}.cgd
//! models/{tl,baseline}/seed_NN.cgm, manifest.json
//! logs/{tl,baseline}/seed_NN.csv
//! eval/summary.csv, per_seed.csv, forecast_{tl,baseline}.csv, indicator.csv
//! ```
//!
//! File payloads do not contain timings or absolute paths, so rerunning a
//! stage with the same configuration reproduces them byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarsegrain::{
    build_paired_dataset, fit_standardizer, split_with_buffer, PairedDataset,
};
use crate::config::ExperimentConfig;
use crate::dynsys::generate_trajectory;
use crate::error::{Error, Result};
use crate::evaluation::{
    forecast_ensemble, holdout_loglik, select_initial_conditions, summarize_forecast,
    summarize_sweep, tl_benefit_indicator, ForecastSummary, Indicator, SeedScore, SweepSummary,
    Truth, SUMMARY_HEADER,
};
use crate::formats::{self, ModelMeta, SplitKind, DATASET_VERSION, MODEL_VERSION};
use crate::seqmodel::EmulatorModel;
use crate::training::{seed_sweep, Mode, RunLog, SweepRun};

/// Output locations relative to the run directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn dataset(&self, split: SplitKind) -> PathBuf {
        self.root.join("data").join(format!("{}.cgd", split.name()))
    }

    pub fn model_rel(mode: Mode, index: usize) -> String {
        format!("models/{}/seed_{index:02}.cgm", mode.name())
    }

    pub fn log_rel(mode: Mode, index: usize) -> String {
        format!("logs/{}/seed_{index:02}.csv", mode.name())
    }

    pub fn manifest(&self, mode: Mode) -> PathBuf {
        self.root
            .join("models")
            .join(mode.name())
            .join("manifest.json")
    }

    pub fn eval(&self, file: &str) -> PathBuf {
        self.root.join("eval").join(file)
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, contents)?;
    Ok(())
}

/// In-memory train/validation/hold-out splits, standardized by train.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: PairedDataset,
    pub val: PairedDataset,
    pub holdout: PairedDataset,
}

/// Simulates, coarse-grains and splits without touching the disk. The
/// simulation seed is the master seed.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Splits> {
    cfg.validate()?;
    let fine = generate_trajectory(&cfg.simulation, cfg.master_seed, cfg.fine_samples())?;
    let paired = build_paired_dataset(&fine, &cfg.coarsen)?;
    let (mut train, mut val, mut holdout) = split_with_buffer(&paired, &cfg.split)?;
    let std = fit_standardizer(&train)?;
    for ds in [&mut train, &mut val, &mut holdout] {
        ds.standardizer = Some(std.clone());
    }
    Ok(Splits {
        train,
        val,
        holdout,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    /// `(split, path, crc)` per written file.
    pub files: Vec<(SplitKind, PathBuf, u32)>,
    pub d: usize,
    pub m: usize,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulateReport> {
    let splits = prepare_data(cfg)?;
    let paths = Paths::new(&cfg.out_dir);
    write_file(&paths.config(), cfg.to_toml_portable())?;
    let mut files = Vec::new();
    for (kind, ds) in [
        (SplitKind::Train, &splits.train),
        (SplitKind::Val, &splits.val),
        (SplitKind::Holdout, &splits.holdout),
    ] {
        let path = paths.dataset(kind);
        create_parent(&path)?;
        let crc = formats::write_dataset(&path, ds, kind, cfg.data_hash())?;
        files.push((kind, path, crc));
    }
    Ok(SimulateReport {
        files,
        d: splits.train.d(),
        m: splits.train.m,
    })
}

/// Reads one split and checks that it was generated by `cfg`.
pub fn load_split(cfg: &ExperimentConfig, kind: SplitKind) -> Result<PairedDataset> {
    let path = Paths::new(&cfg.out_dir).dataset(kind);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `simulate` with this configuration first",
            path.display()
        )));
    }
    let file = formats::read_dataset(&path)?;
    if file.header.split != kind || file.header.system != cfg.system {
        return Err(Error::Format(format!(
            "{} holds the {} split of {}, expected the {} split of {}",
            path.display(),
            file.header.split.name(),
            file.header.system,
            kind.name(),
            cfg.system
        )));
    }
    if file.header.config_hash != cfg.data_hash() {
        return Err(Error::Config(format!(
            "{} was generated with different data settings (hash {:016x}, current {:016x}); rerun `simulate`",
            path.display(),
            file.header.config_hash,
            cfg.data_hash()
        )));
    }
    Ok(file.dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub index: usize,
    pub seed: u64,
    /// `"ok"` or the failure message.
    pub status: String,
    pub artifact: Option<String>,
    pub log: Option<String>,
    pub best_epoch: Option<usize>,
    pub best_val_ll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub system: String,
    pub mode: String,
    pub config_hash: String,
    pub dataset_version: u32,
    pub model_version: u32,
    /// Whether the high-resolution block of the training data was read.
    pub y_block_read: bool,
    pub runs: Vec<ManifestRun>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!(
                "cannot read {}: {e}; run `train` first",
                path.display()
            ))
        })?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.model_version != MODEL_VERSION || m.dataset_version != DATASET_VERSION {
            return Err(Error::Version {
                what: format!("manifest {}", path.display()),
                found: if m.model_version != MODEL_VERSION {
                    m.model_version
                } else {
                    m.dataset_version
                },
                expected: if m.model_version != MODEL_VERSION {
                    MODEL_VERSION
                } else {
                    DATASET_VERSION
                },
            });
        }
        Ok(m)
    }

    /// Successful run with the greatest validation log-likelihood; ties go
    /// to the lowest index.
    pub fn best_run(&self) -> Option<&ManifestRun> {
        self.runs.iter().filter(|r| r.best_val_ll.is_some()).fold(
            None,
            |best: Option<&ManifestRun>, r| match best {
                Some(b) if b.best_val_ll >= r.best_val_ll => Some(b),
                _ => Some(r),
            },
        )
    }
}

/// CSV of every epoch in a run: `phase,epoch,train_nll,val_ll`.
pub fn run_log_csv(log: &RunLog) -> String {
    let mut s = String::from("phase,epoch,train_nll,val_ll\n");
    for phase in log.pretrain.iter().chain(std::iter::once(&log.lowres)) {
        for e in &phase.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                phase.phase.name(),
                e.epoch,
                e.train_nll,
                e.val_ll
            );
        }
    }
    s
}

#[derive(Debug)]
pub struct TrainReport {
    pub mode: Mode,
    pub manifest: Manifest,
    pub runs: Vec<SweepRun>,
}

/// Trains every seed of `mode` on in-memory splits.
pub fn train_sweep(cfg: &ExperimentConfig, mode: Mode, splits: &Splits) -> Result<Vec<SweepRun>> {
    let arch = cfg.architecture()?;
    seed_sweep(
        mode,
        arch,
        cfg.master_seed,
        &splits.train,
        &splits.val,
        &cfg.train,
    )
}

pub fn train(cfg: &ExperimentConfig, modes: &[Mode]) -> Result<Vec<TrainReport>> {
    cfg.validate()?;
    let paths = Paths::new(&cfg.out_dir);
    let mut reports = Vec::new();
    for &mode in modes {
        let train = load_split(cfg, SplitKind::Train)?;
        let val = load_split(cfg, SplitKind::Val)?;
        let runs = seed_sweep(
            mode,
            cfg.architecture()?,
            cfg.master_seed,
            &train,
            &val,
            &cfg.train,
        )?;
        let mut entries = Vec::with_capacity(runs.len());
        for run in &runs {
            let entry = match &run.outcome {
                Ok((model, log)) => {
                    let artifact = Paths::model_rel(mode, run.index);
                    let log_path = Paths::log_rel(mode, run.index);
                    let meta = ModelMeta {
                        system: cfg.system,
                        mode,
                        dataset_version: DATASET_VERSION,
                        seed: run.seed,
                        best_epoch: log.lowres.best_epoch,
                        config_hash: cfg.hash(),
                    };
                    let model_path = paths.root.join(&artifact);
                    create_parent(&model_path)?;
                    formats::write_model(&model_path, model, &meta)?;
                    write_file(&paths.root.join(&log_path), run_log_csv(log))?;
                    ManifestRun {
                        index: run.index,
                        seed: run.seed,
                        status: "ok".into(),
                        artifact: Some(artifact),
                        log: Some(log_path),
                        best_epoch: Some(log.lowres.best_epoch),
                        best_val_ll: Some(log.lowres.best_val_ll()),
                    }
                }
                Err(msg) => ManifestRun {
                    index: run.index,
                    seed: run.seed,
                    status: msg.clone(),
                    artifact: None,
                    log: None,
                    best_epoch: None,
                    best_val_ll: None,
                },
            };
            entries.push(entry);
        }
        let manifest = Manifest {
            system: cfg.system.name().into(),
            mode: mode.name().into(),
            config_hash: format!("{:016x}", cfg.hash()),
            dataset_version: DATASET_VERSION,
            model_version: MODEL_VERSION,
            y_block_read: train.y_was_read(),
            runs: entries,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_file(&paths.manifest(mode), json)?;
        reports.push(TrainReport {
            mode,
            manifest,
            runs,
        });
    }
    Ok(reports)
}

/// Loads every successful model listed in a manifest, in index order.
pub fn load_models(
    cfg: &ExperimentConfig,
    mode: Mode,
) -> Result<Vec<(ManifestRun, EmulatorModel)>> {
    let paths = Paths::new(&cfg.out_dir);
    let manifest = Manifest::read(&paths.manifest(mode))?;
    if manifest.config_hash != format!("{:016x}", cfg.hash()) {
        return Err(Error::Config(format!(
            "{} models were trained with config {}, current config is {:016x}; rerun `train`",
            mode.name(),
            manifest.config_hash,
            cfg.hash()
        )));
    }
    manifest
        .runs
        .iter()
        .filter_map(|r| r.artifact.as_ref().map(|a| (r, a)))
        .map(|(r, a)| {
            let (model, meta) = formats::read_model(&paths.root.join(a))?;
            if meta.mode != mode || meta.seed != r.seed {
                return Err(Error::Format(format!(
                    "{a} does not match its manifest entry"
                )));
            }
            Ok((r.clone(), model))
        })
        .collect()
}

/// Validation and hold-out scores for each model, in the given order.
pub fn score_models(
    models: &[&EmulatorModel],
    seeds: &[u64],
    val: &PairedDataset,
    holdout: &PairedDataset,
) -> Result<Vec<SeedScore>> {
    let val_x = val.x_standardized()?;
    let hold_x = holdout.x_standardized()?;
    models
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(model, &seed)| {
            Ok(SeedScore {
                seed,
                val_ll: holdout_loglik(model, &val_x)?,
                holdout_ll: holdout_loglik(model, &hold_x)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub tl: SweepSummary,
    pub baseline: SweepSummary,
    pub row: String,
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let val = load_split(cfg, SplitKind::Val)?;
    let holdout = load_split(cfg, SplitKind::Holdout)?;
    let mut per_seed = String::from("mode,index,seed,val_ll,holdout_ll\n");
    let mut scores = Vec::new();
    for mode in [Mode::Tl, Mode::Baseline] {
        let loaded = load_models(cfg, mode)?;
        let models: Vec<&EmulatorModel> = loaded.iter().map(|(_, m)| m).collect();
        let seeds: Vec<u64> = loaded.iter().map(|(r, _)| r.seed).collect();
        let s = score_models(&models, &seeds, &val, &holdout)?;
        for ((run, _), sc) in loaded.iter().zip(&s) {
            let _ = writeln!(
                per_seed,
                "{},{},{},{},{}",
                mode.name(),
                run.index,
                sc.seed,
                sc.val_ll,
                sc.holdout_ll
            );
        }
        scores.push(s);
    }
    let baseline = scores.pop().unwrap();
    let tl = scores.pop().unwrap();
    let (tl, baseline, row) = summarize_sweep(cfg.system.name(), tl, baseline)?;
    let paths = Paths::new(&cfg.out_dir);
    write_file(&paths.eval("per_seed.csv"), per_seed)?;
    write_file(
        &paths.eval("summary.csv"),
        format!("{SUMMARY_HEADER}\n{row}\n"),
    )?;
    Ok(EvalReport { tl, baseline, row })
}

/// `lead_time,error,spread` rows.
pub fn forecast_csv(s: &ForecastSummary) -> String {
    let mut out = String::from("lead_time,error,spread\n");
    for ((t, e), sp) in s.lead_times.iter().zip(&s.error).zip(&s.spread) {
        let _ = writeln!(out, "{t},{e},{sp}");
    }
    out
}

/// Noise-on ensemble forecast of one model from the hold-out split.
pub fn forecast_model(
    cfg: &ExperimentConfig,
    model: &EmulatorModel,
    holdout: &PairedDataset,
) -> Result<ForecastSummary> {
    let inits = select_initial_conditions(holdout.len(), &cfg.forecast)?;
    let ens = forecast_ensemble(model, &holdout.x, &inits, &cfg.forecast, true)?;
    let truth = Truth::from_series(&holdout.x, &inits, cfg.forecast.n_steps)?;
    summarize_forecast(&ens, &truth)
}

/// Forecasts with the best-validation model of each mode.
pub fn forecast(cfg: &ExperimentConfig, modes: &[Mode]) -> Result<Vec<(Mode, ForecastSummary)>> {
    let holdout = load_split(cfg, SplitKind::Holdout)?;
    let paths = Paths::new(&cfg.out_dir);
    let mut out = Vec::new();
    for &mode in modes {
        let manifest = Manifest::read(&paths.manifest(mode))?;
        let best = manifest.best_run().ok_or_else(|| {
            Error::Config(format!(
                "no successful {} runs to forecast with",
                mode.name()
            ))
        })?;
        let artifact = best
            .artifact
            .as_ref()
            .expect("successful runs have artifacts");
        let (model, _) = formats::read_model(&paths.root.join(artifact))?;
        let summary = forecast_model(cfg, &model, &holdout)?;
        write_file(
            &paths.eval(&format!("forecast_{}.csv", mode.name())),
            forecast_csv(&summary),
        )?;
        out.push((mode, summary));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct IndicatorReport {
    pub n_params: usize,
    pub d: usize,
    pub train_len: usize,
    pub indicator: Indicator,
}

/// Indicator for the configured architecture and training length.
pub fn indicator(cfg: &ExperimentConfig) -> Result<IndicatorReport> {
    let arch = cfg.architecture()?;
    let n_params = EmulatorModel::new(arch, 0)?.num_params();
    let train_len = cfg.split.train_len;
    let ind = tl_benefit_indicator(n_params, arch.d, train_len)?;
    let csv = format!(
        "system,n_params,d,train_len,value,less_beneficial\n{},{n_params},{},{train_len},{},{}\n",
        cfg.system.name(),
        arch.d,
        ind.value,
        ind.less_beneficial
    );
    write_file(&Paths::new(&cfg.out_dir).eval("indicator.csv"), csv)?;
    Ok(IndicatorReport {
        n_params,
        d: arch.d,
        train_len,
        indicator: ind,
    })
}
