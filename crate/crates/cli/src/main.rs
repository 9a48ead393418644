//! Scenario runner for the curvspec library.
//!
//! Every run is reproducible byte for byte: outputs carry the resolved
//! configuration and library versions, file contents depend only on the
//! config and seed, and exit codes separate user error (1), rejected
//! hypotheses (2), residuals above their gate (3), and numerical aborts (4).

mod commands;
mod config;
mod fields;
mod outcome;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::Kind;
use config::{Overrides, Tier};
use outcome::Failure;

#[derive(Parser)]
#[command(name = "curvspec", version, about = "Spectra and curvature flows on model geometries")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario description (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output root; each run writes into <out>/<scenario-name>/.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Tolerance tier override; defaults follow the backend.
    #[arg(long, global = true, value_enum)]
    tier: Option<Tier>,

    /// Worker threads for verify-all; defaults to the available cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Seed override for randomized identity checks.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the weighted eigenproblem and write the spectrum table.
    Spectrum,
    /// Integrate the flow and write trajectory, rates, and residuals.
    Evolve,
    /// Run identity and margin checks against the configured state.
    Verify {
        /// Comma-separated check names; overrides the config selection.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<String>>,
    },
    /// Evolve, then test theorem hypotheses and the claimed conclusion.
    CheckHypotheses,
    /// Run every shipped scenario and compare against expected outcomes.
    VerifyAll,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        // Usage problems are exit 1 here, not clap's default.
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let overrides = Overrides {
        out: cli.out,
        env_out: std::env::var_os("CURVSPEC_OUT").map(PathBuf::from),
        tier: cli.tier,
        seed: cli.seed,
    };

    let result = match cli.command {
        Command::VerifyAll => commands::verify_all::run(&overrides, cli.threads),
        ref single => {
            let kind = match single {
                Command::Spectrum => Kind::Spectrum,
                Command::Evolve => Kind::Evolve,
                Command::Verify { .. } => Kind::Verify,
                Command::CheckHypotheses => Kind::CheckHypotheses,
                Command::VerifyAll => unreachable!("handled above"),
            };
            match cli.config.as_deref() {
                None => Err(Failure::usage("this command needs --config PATH")),
                Some(path) => config::load(path, &overrides).and_then(|resolved| {
                    if let Command::Verify { only: Some(names) } = &cli.command {
                        commands::verify::run(&resolved, Some(names.as_slice()))
                    } else {
                        commands::dispatch(kind, &resolved)
                    }
                }),
            }
        }
    };

    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.code())
        }
    }
}
