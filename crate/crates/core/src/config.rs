//! Experiment configuration with per-system presets.
//!
//! Any field can be overridden from a TOML file or `key.path=value` pairs;
//! overrides are merged onto the preset for the chosen system.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarsegrain::{CoarsenSpec, SplitPlan};
use crate::dynsys::{BrusselatorSpec, KsSpec, L96Spec, Layout, SystemSpec, SystemTag};
use crate::error::{Error, Result};
use crate::evaluation::ForecastConfig;
use crate::seqmodel::Architecture;
use crate::training::TrainPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size experiment.
    Paper,
    /// Reduced sizes that finish in minutes on one core.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden: usize,
    pub head_x_width: usize,
    pub head_y_width: usize,
    pub dropout: f64,
}

impl ArchConfig {
    pub fn for_system(system: SystemTag) -> Self {
        let (hidden, head_x_width, head_y_width) = match system {
            SystemTag::Ks => (8, 8, 16),
            SystemTag::Brusselator => (8, 64, 64),
            SystemTag::L96 => (32, 32, 4),
        };
        Self {
            hidden,
            head_x_width,
            head_y_width,
            dropout: 0.3,
        }
    }

    pub fn architecture(&self, d: usize, m: usize) -> Architecture {
        Architecture {
            d,
            m,
            hidden: self.hidden,
            head_x_width: self.head_x_width,
            head_y_width: self.head_y_width,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemTag,
    pub preset: Preset,
    pub master_seed: u64,
    /// Not part of the config hash.
    pub out_dir: PathBuf,
    pub simulation: SystemSpec,
    pub coarsen: CoarsenSpec,
    pub split: SplitPlan,
    pub arch: ArchConfig,
    pub train: TrainPlan,
    pub forecast: ForecastConfig,
}

impl ExperimentConfig {
    pub fn preset(system: SystemTag, preset: Preset) -> Self {
        let full_split = |train_len| SplitPlan {
            train_len,
            val_len: 10_000,
            holdout_len: 30_000,
            buffer_len: 1_000,
        };
        let mut cfg = Self {
            system,
            preset,
            master_seed: 0,
            out_dir: PathBuf::from("runs").join(system.name()),
            simulation: match system {
                SystemTag::Ks => SystemSpec::Ks(KsSpec::default()),
                SystemTag::Brusselator => SystemSpec::Brusselator(BrusselatorSpec::default()),
                SystemTag::L96 => SystemSpec::L96(L96Spec::default()),
            },
            coarsen: CoarsenSpec::for_system(system),
            split: full_split(match system {
                SystemTag::Ks => 10_000,
                SystemTag::Brusselator => 600,
                SystemTag::L96 => 400,
            }),
            arch: ArchConfig::for_system(system),
            train: TrainPlan::for_system(system),
            forecast: ForecastConfig {
                m: 500,
                n: 40,
                n_steps: 500,
                warmup: 100,
                seed: 0,
            },
        };
        if preset == Preset::Desk {
            cfg.train.n_seeds = 5;
            cfg.forecast = ForecastConfig {
                m: 50,
                n: 10,
                n_steps: 200,
                warmup: 100,
                seed: 0,
            };
            match &mut cfg.simulation {
                SystemSpec::Ks(_) => {
                    cfg.split = SplitPlan {
                        train_len: 2_000,
                        val_len: 2_000,
                        holdout_len: 4_000,
                        buffer_len: 100,
                    };
                    cfg.train.phase2_epochs = 60;
                }
                SystemSpec::Brusselator(b) => {
                    b.side = 32;
                    b.spinup_steps = 2_000;
                    cfg.split = SplitPlan {
                        train_len: 600,
                        val_len: 1_000,
                        holdout_len: 2_000,
                        buffer_len: 100,
                    };
                    cfg.train.phase2_epochs = 100;
                }
                SystemSpec::L96(_) => {
                    cfg.split = SplitPlan {
                        train_len: 400,
                        val_len: 2_000,
                        holdout_len: 4_000,
                        buffer_len: 100,
                    };
                    cfg.train.phase2_epochs = 100;
                }
            }
        }
        cfg
    }

    /// Preset for `system`, then the TOML file, then `key=value` overrides.
    /// The system and preset may themselves come from the file.
    pub fn resolve(
        system: Option<SystemTag>,
        preset: Option<Preset>,
        file: Option<&Path>,
        sets: &[String],
    ) -> Result<Self> {
        let file_value = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Some(
                    text.parse::<toml::Table>()
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                )
            }
            None => None,
        };
        let from_file = |key: &str| {
            file_value
                .as_ref()
                .and_then(|t| t.get(key))
                .and_then(|v| v.as_str())
        };
        let system = match system {
            Some(s) => s,
            None => from_file("system")
                .ok_or_else(|| {
                    Error::Config(
                        "no system given (use --system or set `system` in the config file)".into(),
                    )
                })?
                .parse()?,
        };
        let preset = match preset {
            Some(p) => p,
            None => from_file("preset")
                .map(str::parse)
                .transpose()?
                .unwrap_or(Preset::Paper),
        };
        let base = Self::preset(system, preset);
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(t) = file_value {
            merge(&mut merged, t);
        }
        for s in sets {
            apply_set(&mut merged, s)?;
        }
        merged.insert("system".into(), toml::Value::String(system.name().into()));
        merged.insert(
            "preset".into(),
            toml::Value::String(
                if preset == Preset::Paper {
                    "paper"
                } else {
                    "desk"
                }
                .into(),
            ),
        );
        let cfg: Self = merged
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.simulation.tag() != self.system || self.coarsen.system != self.system {
            return Err(Error::Config(format!(
                "simulation ({}) and coarsening ({}) must match system {}",
                self.simulation.tag(),
                self.coarsen.system,
                self.system
            )));
        }
        self.simulation.validate()?;
        self.train.validate()?;
        self.dims()?;
        if self.split.train_len < self.train.tbptt_len + 1 {
            return Err(Error::Config(format!(
                "training split ({}) is shorter than one TBPTT window ({})",
                self.split.train_len,
                self.train.tbptt_len + 1
            )));
        }
        Ok(())
    }

    /// First 8 bytes of SHA-256 over the canonical JSON form, excluding the
    /// output directory.
    pub fn hash(&self) -> u64 {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// TOML without `out_dir`, so a run directory's record does not depend on
    /// where it was written.
    pub fn to_toml_portable(&self) -> String {
        let mut v = toml::Value::try_from(self).expect("config serializes");
        if let Some(t) = v.as_table_mut() {
            t.remove("out_dir");
        }
        toml::to_string_pretty(&v).expect("config serializes")
    }

    /// Coarse width `d` and refinement factor `m` implied by the layout.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let f = self.coarsen.spatial_factor;
        let divisible = |n: usize| {
            if f == 0 || !n.is_multiple_of(f) {
                Err(Error::Config(format!(
                    "spatial factor {f} does not divide grid size {n}"
                )))
            } else {
                Ok(n / f)
            }
        };
        match self.simulation.layout() {
            Layout::Ks { grid_points } => Ok((divisible(grid_points)?, f)),
            Layout::Brusselator { side } => {
                let s = divisible(side)?;
                Ok((2 * s * s, f * f))
            }
            Layout::L96 { k, j } => Ok((k, j)),
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let (d, m) = self.dims()?;
        Ok(self.arch.architecture(d, m))
    }

    /// Hash of the fields that determine the generated data.
    pub fn data_hash(&self) -> u64 {
        let v = serde_json::json!({
            "master_seed": self.master_seed,
            "simulation": self.simulation,
            "coarsen": self.coarsen,
            "split": self.split,
        });
        let digest = Sha256::digest(v.to_string().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Fine-trajectory samples needed to fill the split plan.
    pub fn fine_samples(&self) -> usize {
        self.split.total() * self.coarsen.temporal_factor
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_set(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override '{assignment}' is not of the form key=value"
        ))
    })?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut table = root;
    for key in &keys[..keys.len() - 1] {
        table = table
            .get_mut(*key)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| Error::Config(format!("unknown config section '{key}' in '{path}'")))?;
    }
    let last = keys[keys.len() - 1];
    if !table.contains_key(last) {
        return Err(Error::Config(format!("unknown config field '{path}'")));
    }
    table.insert(last.to_string(), value);
    Ok(())
}
