use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tlemu::commands;
use tlemu::config::{ExperimentConfig, Preset};
use tlemu::dynsys::SystemTag;
use tlemu::training::Mode;

#[derive(Parser)]
#[command(
    name = "tlemu",
    version,
    about = "Transfer-learning emulators for coarse-grained dynamical systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, coarse-grain and split a trajectory.
    Simulate(Common),
    /// Train a seed sweep.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
    },
    /// Hold-out log-likelihood of every trained seed plus the summary row.
    Evaluate(Common),
    /// Ensemble forecast error and spread of the best-validation models.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
    },
    /// Transfer-benefit indicator for the configured model and data size.
    Indicator(Common),
    /// Print the resolved configuration as TOML.
    Config(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum)]
    system: Option<SystemArg>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// TOML file merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any field, e.g. `--set train.lr=0.0005`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_seeds: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Ks,
    Brusselator,
    L96,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Tl,
    Baseline,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Tl => vec![Mode::Tl],
            ModeArg::Baseline => vec![Mode::Baseline],
            ModeArg::Both => vec![Mode::Tl, Mode::Baseline],
        }
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        let system = self.system.map(|s| match s {
            SystemArg::Ks => SystemTag::Ks,
            SystemArg::Brusselator => SystemTag::Brusselator,
            SystemArg::L96 => SystemTag::L96,
        });
        let preset = self.preset.map(|p| match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        });
        let mut sets = self.sets.clone();
        if let Some(s) = self.seed {
            sets.push(format!("master_seed={s}"));
            sets.push(format!("forecast.seed={s}"));
        }
        if let Some(o) = &self.out {
            sets.push(format!("out_dir={:?}", o.display().to_string()));
        }
        if let Some(n) = self.n_seeds {
            sets.push(format!("train.n_seeds={n}"));
        }
        Ok(ExperimentConfig::resolve(
            system,
            preset,
            self.config.as_deref(),
            &sets,
        )?)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.resolve()?;
            eprintln!(
                "simulating {} ({} fine samples)",
                cfg.system,
                cfg.fine_samples()
            );
            let r = commands::simulate(&cfg)?;
            println!("d = {}, m = {}", r.d, r.m);
            for (kind, path, crc) in r.files {
                println!("{:<8} {} crc32={crc:08x}", kind.name(), path.display());
            }
        }
        Command::Train { common, mode } => {
            let cfg = common.resolve()?;
            for report in commands::train(&cfg, &mode.modes())? {
                let ok = report
                    .manifest
                    .runs
                    .iter()
                    .filter(|r| r.status == "ok")
                    .count();
                println!(
                    "{}: {ok}/{} seeds trained, manifest {}",
                    report.mode.name(),
                    report.manifest.runs.len(),
                    commands::Paths::new(&cfg.out_dir)
                        .manifest(report.mode)
                        .display()
                );
                for r in report.manifest.runs.iter().filter(|r| r.status != "ok") {
                    eprintln!("  seed {} ({}) failed: {}", r.index, r.seed, r.status);
                }
            }
        }
        Command::Evaluate(c) => {
            let cfg = c.resolve()?;
            let r = commands::evaluate(&cfg)?;
            println!("{}", tlemu::evaluation::SUMMARY_HEADER);
            println!("{}", r.row);
            println!("std: tl {:.6}, baseline {:.6}", r.tl.std, r.baseline.std);
        }
        Command::Forecast { common, mode } => {
            let cfg = common.resolve()?;
            for (mode, s) in commands::forecast(&cfg, &mode.modes())? {
                let last = s.error.len() - 1;
                println!(
                    "{}: error {:.4} -> {:.4}, spread {:.4} -> {:.4} over {} steps ({} members excluded)",
                    mode.name(),
                    s.error[0],
                    s.error[last],
                    s.spread[0],
                    s.spread[last],
                    s.error.len(),
                    s.excluded
                );
            }
        }
        Command::Indicator(c) => {
            let cfg = c.resolve()?;
            let r = commands::indicator(&cfg)?;
            println!(
                "{}: n_params={} d={} train_len={} indicator={:.4}{}",
                cfg.system,
                r.n_params,
                r.d,
                r.train_len,
                r.indicator.value,
                if r.indicator.less_beneficial {
                    " (transfer less beneficial)"
                } else {
                    ""
                }
            );
        }
        Command::Config(c) => print!("{}", c.resolve()?.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
