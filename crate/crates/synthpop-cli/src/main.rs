//! Batch front end for the synthetic-population pipeline.
//!
//! Exit codes: 0 on success, 1 on any input error, 2 when a quality gate
//! fails (`--require-exact` with a block that did not reach an exact fit).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};

use config::LoadedConfig;

#[derive(Parser)]
#[command(
    name = "synthpop",
    version,
    about = "Synthesize, validate, and privacy-stress individual-level population data \
             from census-style tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit counts to the tables and expand them into person records.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Override the solver seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Cap solver worker threads (default: machine parallelism).
        #[arg(long)]
        threads: Option<usize>,
        /// Exit 2 unless every block reaches objective zero.
        #[arg(long)]
        require_exact: bool,
    },
    /// Validate a persons file against the source tables and, optionally,
    /// external microdata.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        persons: PathBuf,
        /// County-level microdata sample for external validation.
        #[arg(long)]
        microdata: Option<PathBuf>,
        /// County code for external validation (inferred when the persons
        /// file covers exactly one county).
        #[arg(long)]
        county: Option<String>,
        /// Also write the scatter pairs behind each correlation.
        #[arg(long)]
        scatter: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Perturb the tables under differential privacy and map the per-tract
    /// error of a target percentage.
    Errmap {
        #[arg(long)]
        config: PathBuf,
        /// Target predicate, e.g. `race=black`.
        #[arg(long)]
        target: String,
        /// Override the privacy budget from the config file.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Override the number of perturbation runs.
        #[arg(long)]
        runs: Option<u32>,
        /// Override the noise seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the cross-table consistency report and exit.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let threads = match &cli.command {
        Command::Synth { threads, .. }
        | Command::Validate { threads, .. }
        | Command::Errmap { threads, .. } => *threads,
        Command::Check { .. } => None,
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: configuring {n} threads: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match &cli.command {
        Command::Synth {
            config,
            seed,
            require_exact,
            ..
        } => LoadedConfig::load(config)
            .and_then(|cfg| commands::cmd_synth(&cfg, *seed, *require_exact)),
        Command::Validate {
            config,
            persons,
            microdata,
            county,
            scatter,
            ..
        } => LoadedConfig::load(config).and_then(|cfg| {
            commands::cmd_validate(
                &cfg,
                persons,
                microdata.as_deref(),
                county.as_deref(),
                *scatter,
            )
        }),
        Command::Errmap {
            config,
            target,
            epsilon,
            runs,
            seed,
            ..
        } => LoadedConfig::load(config)
            .and_then(|cfg| commands::cmd_errmap(&cfg, target, *epsilon, *runs, *seed)),
        Command::Check { config } => {
            LoadedConfig::load(config).and_then(|cfg| commands::cmd_check(&cfg))
        }
    };

    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
