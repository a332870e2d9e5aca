//! Experiment harness around `wsfn-core`: presets, run configs, trial
//! orchestration, trace and plot artifacts, and the `wsfn-lab` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod presets;
pub mod runner;
