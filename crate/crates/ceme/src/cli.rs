//! Command-line front end. Exit status: 0 success, 1 pilot threshold failure,
//! 2 usage error, 3 internal error.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, PILOT_TOML};
use crate::layout::RunDir;
use crate::pilot::run_pilot;
use crate::report::report;
use crate::runner::{evaluate, generate, train, Filters, UsageError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_THRESHOLD: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "ceme", version, about = "Causal effect estimation with a mismeasured continuous treatment")]
pub struct Cli {
    /// Experiment config (TOML). `pilot` falls back to the bundled pilot config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Restrict to matching cells: dataset, variant, noise_level, n_train, replicate.
    #[arg(long = "filter", global = true, value_name = "KEY=VALUE")]
    pub filters: Vec<String>,
    /// Overrides the config's master seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Run directory; overrides the config's `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write every dataset of the grid with its truth checkpoint and manifest.
    Generate,
    /// Train all (dataset × variant) cells; completed cells are skipped.
    Train,
    /// Evaluate chosen runs and write per-cell JSON, aggregate and plot CSVs.
    Evaluate,
    /// generate + train + evaluate on the pilot grid, then check thresholds.
    Pilot,
    /// Quartile summary of the aggregate table.
    Report,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, cli.command) {
        (Some(path), _) => ExperimentConfig::load(path).map_err(|e| usage(format!("{e:#}")))?,
        (None, Command::Pilot) => ExperimentConfig::from_toml(PILOT_TOML)?,
        (None, Command::Report) if cli.out.is_some() => ExperimentConfig::from_toml(PILOT_TOML)?,
        (None, _) => return Err(usage("--config is required for this command")),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<u8> {
    let filters = Filters::parse(&cli.filters)?;
    if !cli.filters.is_empty() && matches!(cli.command, Command::Pilot | Command::Report) {
        return Err(usage("--filter applies to generate, train and evaluate only"));
    }
    let cfg = load_config(cli)?;
    let dir = RunDir::new(&cfg.out_dir);
    match cli.command {
        Command::Generate => {
            let n = generate(&cfg, &dir, &filters)?;
            println!("generated {n} datasets under {}", dir.root.join("datasets").display());
        }
        Command::Train => {
            let s = train(&cfg, &dir, &filters)?;
            println!(
                "cells: {} trained, {} resumed, {} skipped, {} failed",
                s.trained, s.resumed, s.skipped, s.failed
            );
        }
        Command::Evaluate => {
            let t = evaluate(&cfg, &dir, &filters)?;
            println!(
                "{} result rows, {} failure rows; aggregate at {}",
                t.rows.len(),
                t.failures.len(),
                dir.aggregate().display()
            );
        }
        Command::Pilot => {
            let s = run_pilot(&cfg, &dir)?;
            println!(
                "pilot: {} datasets, {} result rows, {} failure rows",
                s.datasets, s.success_rows, s.failure_rows
            );
            for c in &s.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if !s.passed() {
                return Ok(EXIT_THRESHOLD);
            }
        }
        Command::Report => print!("{}", report(&dir)?),
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_INTERNAL
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["ceme"]), EXIT_USAGE);
        assert_eq!(run(["ceme", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["ceme", "train"]), EXIT_USAGE);
        assert_eq!(run(["ceme", "train", "--config", "/nonexistent/c.toml"]), EXIT_USAGE);
        assert_eq!(run(["ceme", "pilot", "--filter", "variant=ceme"]), EXIT_USAGE);
        assert_eq!(run(["ceme", "train", "--filter", "nonsense"]), EXIT_USAGE);
        assert_eq!(run(["ceme", "--help"]), EXIT_OK);
    }
}
