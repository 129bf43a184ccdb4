//! Batch front end for the equilibrium solvers: one JSON config per run,
//! artifacts (`result.json`, `trace.csv`, `certificate.json`, ...) in an
//! output directory, and exit statuses that separate configuration, domain
//! and convergence failures.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

use std::path::Path;

pub use config::{ConfigError, Mode, Overrides, RunConfig};
pub use run::{exit_code, run, Status};

/// Load the config at `path`, apply the overrides and run it.
pub fn execute(path: &Path, overrides: &Overrides, out: &Path) -> anyhow::Result<Status> {
    let (config, base) = RunConfig::load(path, overrides)?;
    run(&config, &base, out)
}
