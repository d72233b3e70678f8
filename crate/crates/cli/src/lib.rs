//! Experiment runner: scene generation, training, evaluation sweeps,
//! descriptor renderings and plots, each writing a run manifest.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;
pub mod viz;

pub use commands::{run, Cli};
