use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cournot_cli::{execute, exit_code, Mode, Overrides};

/// Certify, solve and verify discrete-time Cournot-Nash mean-field equilibria.
#[derive(Parser)]
#[command(version, about, long_about = None)]
struct Cli {
    /// Run configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's mode
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Override the solver tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Directory for result.json, trace.csv and certificate.json
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the seed for randomized probes
    #[arg(long)]
    seed: Option<u64>,
    /// Require a passing contraction certificate before iterating
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides { mode: cli.mode, tol: cli.tol, seed: cli.seed, strict: cli.strict };
    match execute(&cli.config, &overrides, &cli.out) {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
