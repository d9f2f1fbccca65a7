//! `kpzlab`: run directories with manifests for every experiment module.

mod commands;
mod config;
mod report;
mod run;

use clap::{Parser, Subcommand};
use config::{load, ConfigError, Versioned};
use run::{Format, RunDir};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kpzlab", version, about = "Kicked Burgers / KPZ numerical laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one realization and store snapshots, shocks and strips.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compose strip configurations and fit the density exponent.
    Renorm {
        #[arg(long)]
        config: PathBuf,
    },
    /// Empty-interval probabilities of coalescing walks against the Pfaffian.
    Coalesce {
        #[arg(long)]
        config: PathBuf,
    },
    /// Shape function, scaling exponents, age tails, sigma, Lyapunov rate.
    Exponents {
        #[arg(long)]
        config: PathBuf,
    },
    /// Gibbs path measure against the controlled chain.
    PolymerCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Iterate the two-point-field renormalisation map.
    Airy {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pool several run directories.
    Report { dirs: Vec<PathBuf> },
}

fn configured<T>(path: &Path, seed: Option<u64>) -> anyhow::Result<T>
where
    T: serde::de::DeserializeOwned + Versioned,
{
    let mut cfg: T = load(path)?;
    if let Some(s) = seed {
        *cfg.seed_mut() = s;
    }
    Ok(cfg)
}

fn finish<T: Serialize + Versioned>(run: RunDir, name: &str, mut cfg: T) -> anyhow::Result<()> {
    let seed = *cfg.seed_mut();
    let m = run.finish(name, serde_json::to_value(&cfg)?, seed)?;
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global()?;
    }
    let mut run = RunDir::create(&cli.out, cli.format)?;
    let mut ok = true;
    match &cli.command {
        Command::Simulate { config } => {
            let cfg: config::SimulateCfg = configured(config, cli.seed)?;
            commands::simulate(&cfg, &mut run)?;
            finish(run, "simulate", cfg)?;
        }
        Command::Renorm { config } => {
            let cfg: config::RenormCfg = configured(config, cli.seed)?;
            commands::renorm(&cfg, &mut run)?;
            finish(run, "renorm", cfg)?;
        }
        Command::Coalesce { config } => {
            let cfg: config::CoalesceCfg = configured(config, cli.seed)?;
            commands::coalesce(&cfg, &mut run)?;
            finish(run, "coalesce", cfg)?;
        }
        Command::Exponents { config } => {
            let cfg: config::ExponentsCfg = configured(config, cli.seed)?;
            commands::exponents(&cfg, &mut run)?;
            finish(run, "exponents", cfg)?;
        }
        Command::PolymerCheck { config } => {
            let cfg: config::PolymerCheckCfg = configured(config, cli.seed)?;
            ok = commands::polymer_check(&cfg, &mut run)?;
            finish(run, "polymer-check", cfg)?;
        }
        Command::Airy { config } => {
            let cfg: config::AiryCfg = configured(config, cli.seed)?;
            commands::airy(&cfg, &mut run)?;
            finish(run, "airy", cfg)?;
        }
        Command::Report { dirs } => {
            let params = report::report(dirs, &mut run)?;
            let m = run.finish("report", params, 0)?;
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(ok)
}

/// 2 for configuration problems, 4 for too little data, 3 for numeric
/// failures, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(k) = cause.downcast_ref::<kpzlab::Error>() {
            return k.exit_code() as u8;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
