//! Scenario runner for `roughfk`: configuration files, output writers and
//! the run manifest.

pub mod config;
pub mod error;
pub mod runner;

pub use config::{Format, Output, ResolvedConfig, ScenarioConfig};
pub use error::{CliError, CliResult};
pub use runner::{run, run_with_threads, Manifest};

/// `name  summary` lines for every bundled preset, alphabetical.
pub fn preset_listing() -> String {
    roughfk_core::presets::PRESETS
        .iter()
        .map(|p| format!("{:<20}{}\n", p.name, p.summary))
        .collect()
}
