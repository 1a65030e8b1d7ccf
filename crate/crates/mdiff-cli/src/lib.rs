//! Command-line harness around the planning library: dataset generation,
//! two-phase training, meta-test evaluation, ablation sweeps, and report
//! rendering, sharing one JSON experiment config.

pub mod artifacts;
pub mod commands;
pub mod config;
