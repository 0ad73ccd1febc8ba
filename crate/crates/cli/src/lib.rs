//! Batch entry points of the `pathosr` binary.

pub mod commands;
pub mod config;

pub use commands::{CliError, Outcome};
pub use config::{MetricOptions, RunConfig, SCHEMA_VERSION};

/// Overrides the directory `prepare` writes to when `--out` is absent.
pub const CACHE_ENV: &str = "PATHOSR_CACHE";

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;
