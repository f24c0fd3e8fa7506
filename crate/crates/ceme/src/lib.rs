//! Experiment runner for mismeasured-treatment effect estimation: TOML
//! configs, dataset files, the training/evaluation grid and the `ceme` CLI.

pub mod cli;
pub mod config;
pub mod io;
pub mod layout;
pub mod pilot;
pub mod report;
pub mod runner;
pub mod seeds;
