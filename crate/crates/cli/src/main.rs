//! `noether-dt`: discrete-time optimal control with conserved quantities.
//!
//! ```text
//! noether-dt <solve|check|noether|el|ep|discover> <config.ini>
//!            [--extremal FILE] [--tol X] [--seed N] [--out FILE]
//! ```
//!
//! Exit codes: 0 success/pass, 1 usage or config error, 2 solver
//! non-convergence, 3 check failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use noether_dt::commands::{self, CommonArgs};
use noether_dt::report;

#[derive(Parser)]
#[command(
    name = "noether-dt",
    version,
    about = "Discrete-time Pontryagin extremals, quasi-invariance checks, and conserved-quantity reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommandArgs {
    /// Problem configuration file (INI-style; see the README).
    config: PathBuf,
    /// Extremal / state-sequence CSV. Written by `solve`, read by
    /// `noether`, `el`, and `ep`.
    #[arg(long)]
    extremal: Option<PathBuf>,
    /// Tolerance override: Newton tolerance for `solve`, invariance
    /// tolerance for `check`, pass threshold for `el`/`ep`/`discover`.
    #[arg(long)]
    tol: Option<f64>,
    /// Sampling seed for `check` and `discover`.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the stacked optimality system for an extremal.
    Solve(CommandArgs),
    /// Check quasi-invariance of the configured symmetry family.
    Check(CommandArgs),
    /// Evaluate the conserved quantities along an extremal.
    Noether(CommandArgs),
    /// Euler-Lagrange residuals of a first-order state sequence.
    El(CommandArgs),
    /// Euler-Poisson residuals of an order-m state sequence.
    Ep(CommandArgs),
    /// Search for an affine one-parameter symmetry family.
    Discover(CommandArgs),
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version are successes; everything else is a usage
            // error under the exit-code contract.
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };

    let (name, args): (&'static str, CommandArgs) = match cli.command {
        Command::Solve(a) => ("solve", a),
        Command::Check(a) => ("check", a),
        Command::Noether(a) => ("noether", a),
        Command::El(a) => ("el", a),
        Command::Ep(a) => ("ep", a),
        Command::Discover(a) => ("discover", a),
    };
    let out_path = args.out.clone();
    let common = CommonArgs {
        config: args.config,
        extremal: args.extremal,
        tol: args.tol,
        seed: args.seed,
        out: args.out,
    };

    match commands::run(name, common, argv) {
        Ok(report) => {
            let text = report::render(&report);
            if let Some(path) = out_path {
                if let Err(e) = std::fs::write(&path, &text) {
                    eprintln!("{}: {e}", path.display());
                    return ExitCode::from(1);
                }
            } else {
                print!("{text}");
            }
            ExitCode::from(u8::try_from(report.exit_code).unwrap_or(1))
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
