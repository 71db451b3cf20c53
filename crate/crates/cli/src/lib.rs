//! Command-line front end for the hypervol engine.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hypervol", version, about = "Worst-case option pricing under uncertain hypergeometric volatility")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve P^δ and P₀ and print P^δ at the evaluation point.
    Price(Common),
    /// Simulate paths of the model.
    Simulate(Common),
    /// δ-sweep of P^δ − P₀ with a log-log slope fit.
    Sweep(Common),
    /// Solve the limit price and its first-order corrector.
    Corrector(Common),
    /// 2BSDE residual of the solved surface.
    Check2bsde(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration; omitted sections take the reference values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Monte Carlo seed, overriding `monte_carlo.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a field by dotted path, e.g. `--set model.delta=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Price(c)
            | Command::Simulate(c)
            | Command::Sweep(c)
            | Command::Corrector(c)
            | Command::Check2bsde(c) => c,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let c = cli.command.common();
    let overrides = config::Overrides { sets: c.sets.clone(), seed: c.seed, out: c.out.clone() };
    let cfg = config::load(c.config.as_deref(), &overrides)?;
    if cfg.sigma_assumed {
        eprintln!("note: model.sigma not given; using assumed vol-of-vol {}", cfg.params.sigma);
    }
    match cli.command {
        Command::Price(_) => commands::price(&cfg),
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Sweep(_) => commands::sweep(&cfg),
        Command::Corrector(_) => commands::corrector(&cfg),
        Command::Check2bsde(_) => commands::check2bsde(&cfg),
    }
    .map(|_| ())
}
