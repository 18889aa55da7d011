use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{DeterFamily, FamilyKind, RunConfig};

/// Markets for prediction models: entry, pricing, differentiation and deterrence.
#[derive(Debug, Parser)]
#[command(name = "predmkt", version)]
struct Cli {
    /// TOML file with per-command sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write output here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for simulation commands
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads
    #[arg(long, global = true, env = "PREDMKT_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Free-entry outcomes over a grid of model variances (CSV)
    Sweep {
        /// Comma-separated variances, replacing the configured grid
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Equilibrium prices and surpluses for a set of models (JSON)
    Prices,
    /// Same-model candidates along a one-parameter family (CSV)
    Diff {
        #[arg(long, value_enum)]
        family: Option<FamilyKind>,
        #[arg(long)]
        grid_resolution: Option<usize>,
    },
    /// Two-firm covariate choice game for least squares (JSON)
    Olsgame {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Entry deterrence over a (fixed cost, outside option) grid (CSV)
    Deter {
        #[arg(long, value_enum)]
        family: Option<DeterFamily>,
    },
    /// Monte Carlo checks of the closed forms (JSON)
    Verify {
        #[arg(long)]
        trials: Option<usize>,
    },
}

/// Bad input: exits with status 2.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn is_usage(err: &anyhow::Error) -> bool {
    if err.downcast_ref::<UsageError>().is_some() {
        return true;
    }
    matches!(
        err.downcast_ref::<predmkt::Error>(),
        Some(e) if !matches!(e, predmkt::Error::NonConvergence { .. } | predmkt::Error::Singular(_))
    )
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.into()).build_global()?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let report = match cli.command {
        Command::Sweep { grid } => {
            if let Some(grid) = grid {
                cfg.sweep.variances = grid;
            }
            commands::sweep(&cfg.sweep)?
        }
        Command::Prices => commands::prices(&cfg.prices)?,
        Command::Diff { family, grid_resolution } => {
            if let Some(f) = family {
                cfg.diff.family = f;
            }
            if let Some(r) = grid_resolution {
                cfg.diff.grid_resolution = r;
            }
            commands::diff(&cfg.diff)?
        }
        Command::Olsgame { k } => {
            if let Some(k) = k {
                cfg.olsgame.k = k;
            }
            commands::olsgame(&cfg.olsgame)?
        }
        Command::Deter { family } => {
            if let Some(f) = family {
                cfg.deter.family = f;
            }
            commands::deter(&cfg.deter)?
        }
        Command::Verify { trials } => {
            if let Some(t) = trials {
                cfg.verify.trials = t;
            }
            if let Some(s) = cli.seed {
                cfg.verify.seed = s;
            }
            commands::verify(&cfg.verify)?
        }
    };
    match &cli.out {
        Some(path) => std::fs::write(path, &report.text)?,
        None => std::io::stdout().write_all(report.text.as_bytes())?,
    }
    Ok(report.checks_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("predmkt: one or more checks failed");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("predmkt: {err:#}");
            ExitCode::from(if is_usage(&err) { 2 } else { 1 })
        }
    }
}
