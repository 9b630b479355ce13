//! Configuration, file formats and subcommands of the `hdtn` tool.

pub mod commands;
pub mod config;
pub mod io;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use commands::{EXIT_ADMISSIBILITY, EXIT_FAIL, EXIT_IO, EXIT_OK, EXIT_USAGE};
pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "hdtn", version, about = "Reconstruct piecewise-constant squared slowness from Helmholtz DtN data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to `run.out` or `runs/<command>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Proceed when the refinement conditions fail.
    #[arg(long, global = true)]
    pub override_level_check: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the DtN matrix and boundary weights of the truth field.
    Forward,
    /// Run the multi-level descent.
    Reconstruct,
    /// Run the oracle suite.
    Verify,
    /// Tabulate level constants, refinement conditions, rho and N_max.
    Constants,
    /// Fit the constants bundle numerically.
    Calibrate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Forward => "forward",
            Self::Reconstruct => "reconstruct",
            Self::Verify => "verify",
            Self::Constants => "constants",
            Self::Calibrate => "calibrate",
        }
    }
}

/// Loads the configuration, applies the flags and runs the command. Errors
/// are printed to stderr and turned into exit codes.
pub fn execute(cli: &Cli) -> i32 {
    let Some(path) = &cli.config else {
        eprintln!("error: --config <path> is required");
        return EXIT_USAGE;
    };
    let mut cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return commands::exit_code(&e);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    cfg.run.override_level_check |= cli.override_level_check;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.run.out.clone())
        .unwrap_or_else(|| Path::new("runs").join(cli.command.name()));
    let result = match cli.command {
        Command::Forward => commands::forward(&cfg, &out),
        Command::Reconstruct => commands::reconstruct(&cfg, &out),
        Command::Verify => commands::verify(&cfg, &out),
        Command::Constants => commands::constants(&cfg, &out),
        Command::Calibrate => commands::calibrate(&cfg, &out),
    };
    match result {
        Ok(o) => {
            for l in &o.lines {
                println!("{l}");
            }
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            commands::exit_code(&e)
        }
    }
}
